// Pyramid of pre-activation width-3 convolutions over region embeddings.
// Each stage after the first halves the sequence with a stride-2 max pool;
// every stage is two conv layers wrapped by an identity shortcut.

#include <cmath>

#include "families.hpp"

namespace normprior::modelzoo::detail {

using nlohmann::ordered_json;

namespace {

constexpr int kBuckets = 1 << 14;

class PyramidConv final : public Classifier {
 public:
  PyramidConv(const ModelSpec& spec, ordered_json state, std::uint64_t seed)
      : state_(std::move(state)) {
    const int h = spec.hidden_size;
    buckets_ = state_.at("buckets").get<int>();
    const char* offsets[3] = {"region.prev", "region.self", "region.next"};
    for (int k = 0; k < 3; ++k) {
      auto rng = param_rng(seed, offsets[k]);
      region_[k] = params_.add(offsets[k], uniform_matrix(rng, buckets_, h, 0.1), true);
    }
    region_b_ = params_.add("region.bias", nn::Matrix::Zero(1, h));
    const int stages = (spec.conv_weight_layers - 1) / 2;
    // Shrunk so the residual sum stays bounded through the stack.
    const double bound = 0.5 * std::sqrt(6.0 / (3.0 * h));
    for (int s = 0; s < stages; ++s) {
      for (int k = 0; k < 2; ++k) {
        const std::string base = "conv." + std::to_string(s) + "." + std::to_string(k);
        auto rng = param_rng(seed, base + ".w");
        Conv c;
        c.w = params_.add(base + ".w", uniform_matrix(rng, 3 * h, h, bound));
        c.b = params_.add(base + ".b", nn::Matrix::Zero(1, h));
        convs_.push_back(c);
      }
    }
    auto rng = param_rng(seed, "out.w");
    out_w_ = params_.add("out.w", uniform_matrix(rng, h, spec.num_classes, 1.0 / std::sqrt(h)));
    out_b_ = params_.add("out.b", nn::Matrix::Zero(1, spec.num_classes));
  }

  std::unique_ptr<Classifier> clone() const override { return std::make_unique<PyramidConv>(*this); }

  Encoded encode(std::string_view text, int max_seq_len) const override {
    Encoded e;
    for (const auto& tok : capped_tokens(text, false, max_seq_len, e)) {
      e.ids.push_back(bucket(tok, buckets_));
    }
    if (e.ids.empty()) e.ids.push_back(-1);
    return e;
  }

  nn::Var logits(nn::Graph& g, const Encoded& x) const override {
    const std::size_t n = x.ids.size();
    std::vector<int> prev(n, -1), next(n, -1);
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0) prev[t] = x.ids[t - 1];
      if (t + 1 < n) next[t] = x.ids[t + 1];
    }
    nn::Var h = nn::add(nn::add(g.gather(region_[0], prev), g.gather(region_[1], x.ids)),
                        g.gather(region_[2], next));
    h = nn::add_bias(h, g.param(region_b_));
    for (std::size_t s = 0; s < convs_.size(); s += 2) {
      if (s > 0) h = nn::max_pool_half(h);
      nn::Var r = conv(g, convs_[s], h);
      r = conv(g, convs_[s + 1], r);
      h = nn::add(h, r);
    }
    return nn::add_bias(nn::matmul(nn::max_over_rows(h), g.param(out_w_)), g.param(out_b_));
  }

  ordered_json state() const override { return state_; }

 private:
  struct Conv {
    std::size_t w = 0, b = 0;
  };

  static nn::Var conv(nn::Graph& g, const Conv& c, nn::Var x) {
    return nn::add_bias(nn::matmul(nn::im2col3(nn::relu(x)), g.param(c.w)), g.param(c.b));
  }

  ordered_json state_;
  int buckets_ = 0;
  std::size_t region_[3] = {0, 0, 0};
  std::size_t region_b_ = 0;
  std::vector<Conv> convs_;
  std::size_t out_w_ = 0, out_b_ = 0;
};

}  // namespace

std::unique_ptr<Classifier> build_pyramid(const ModelSpec& spec, const ordered_json* state,
                                          std::uint64_t seed) {
  if (state) return std::make_unique<PyramidConv>(spec, *state, seed);
  return std::make_unique<PyramidConv>(spec, ordered_json{{"buckets", kBuckets}, {"lowercase", false}},
                                       seed);
}

}  // namespace normprior::modelzoo::detail
