// Hashed unigram + bigram logistic model.

#include "families.hpp"
#include "normprior/text.hpp"

namespace normprior::modelzoo::detail {

using nlohmann::ordered_json;

namespace {

constexpr int kBuckets = 1 << 18;

class LinearBaseline final : public Classifier {
 public:
  LinearBaseline(int classes, int buckets) : buckets_(buckets) {
    weights_ = params_.add("features", nn::Matrix::Zero(buckets, classes), /*sparse=*/true);
    bias_ = params_.add("bias", nn::Matrix::Zero(1, classes));
  }

  std::unique_ptr<Classifier> clone() const override {
    return std::make_unique<LinearBaseline>(*this);
  }

  Encoded encode(std::string_view text, int max_seq_len) const override {
    Encoded e;
    const auto toks = capped_tokens(text, true, max_seq_len, e);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      e.ids.push_back(bucket("u\x1f" + toks[i], buckets_));
      if (i > 0) e.ids.push_back(bucket("b\x1f" + toks[i - 1] + "\x1f" + toks[i], buckets_));
    }
    return e;
  }

  nn::Var logits(nn::Graph& g, const Encoded& x) const override {
    nn::Var b = g.param(bias_);
    if (x.ids.empty()) return b;
    return add(sum_rows(g.gather(weights_, x.ids)), b);
  }

  ordered_json state() const override { return {{"buckets", buckets_}, {"lowercase", true}}; }

 private:
  int buckets_;
  std::size_t weights_ = 0;
  std::size_t bias_ = 0;
};

}  // namespace

std::unique_ptr<Classifier> build_linear(const ModelSpec& spec, const ordered_json* state, std::uint64_t) {
  const int buckets = state ? state->at("buckets").get<int>() : kBuckets;
  return std::make_unique<LinearBaseline>(spec.num_classes, buckets);
}

}  // namespace normprior::modelzoo::detail
