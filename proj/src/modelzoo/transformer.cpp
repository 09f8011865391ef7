// Encoder backbone with a linear softmax head on the [CLS] position.

#include <cmath>

#include "families.hpp"
#include "normprior/error.hpp"
#include "normprior/modelzoo/backbone.hpp"

namespace normprior::modelzoo::detail {

using nlohmann::ordered_json;

namespace {

class TransformerFinetune final : public Classifier {
 public:
  TransformerFinetune(const ModelSpec& spec, ordered_json state, std::uint64_t seed)
      : state_(std::move(state)),
        config_(encoder_config_from_json(state_.at("config"))),
        tokenizer_(Tokenizer::from_json(state_.at("tokenizer"))) {
    encoder_ = declare_encoder(params_, config_, seed);
    auto rng = param_rng(seed, "head.w");
    head_w_ = params_.add("head.w", uniform_matrix(rng, config_.hidden, spec.num_classes,
                                                   0.02 * std::sqrt(3.0)));
    head_b_ = params_.add("head.b", nn::Matrix::Zero(1, spec.num_classes));
  }

  void load_encoder(const nn::ParameterStore& weights) {
    for (const auto& w : weights) params_[*params_.find(w.name)].value = w.value;
  }

  std::unique_ptr<Classifier> clone() const override {
    return std::make_unique<TransformerFinetune>(*this);
  }

  Encoded encode(std::string_view text, int max_seq_len) const override {
    Encoded e;
    e.ids = tokenizer_.encode(text, std::min(max_seq_len, config_.max_positions), e.truncated,
                              e.tokens);
    return e;
  }

  nn::Var logits(nn::Graph& g, const Encoded& x) const override {
    nn::Var states = encode_sequence(g, encoder_, config_, x.ids);
    return nn::add_bias(nn::matmul(nn::slice_rows(states, 0, 1), g.param(head_w_)),
                        g.param(head_b_));
  }

  ordered_json state() const override { return state_; }

 private:
  ordered_json state_;
  EncoderConfig config_;
  Tokenizer tokenizer_;
  EncoderParams encoder_;
  std::size_t head_w_ = 0, head_b_ = 0;
};

}  // namespace

std::unique_ptr<Classifier> build_transformer(const ModelSpec& spec, const ordered_json* state,
                                              std::uint64_t seed) {
  if (state) return std::make_unique<TransformerFinetune>(spec, *state, seed);
  Backbone b = resolve_backbone(spec.backbone_id.value_or("compact-encoder"));
  ordered_json st = {{"backbone_id", b.id},
                     {"config", to_json(b.config)},
                     {"tokenizer", b.tokenizer.to_json()}};
  auto model = std::make_unique<TransformerFinetune>(spec, std::move(st), seed);
  if (b.weights) model->load_encoder(*b.weights);
  return model;
}

}  // namespace normprior::modelzoo::detail
