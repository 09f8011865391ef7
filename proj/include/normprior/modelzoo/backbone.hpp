#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "normprior/nn/graph.hpp"

namespace normprior::modelzoo {

struct EncoderConfig {
  int vocab_size = 0;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int intermediate = 256;
  int max_positions = 512;
  int type_vocab = 2;
  double layer_norm_eps = 1e-12;

  bool operator==(const EncoderConfig&) const = default;
};

nlohmann::ordered_json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::ordered_json& j);

// Word ids for the encoder. "hashed" maps words to buckets after four
// reserved ids; "wordpiece" is greedy longest-match over a vocabulary with
// "##" continuation pieces.
class Tokenizer {
 public:
  static Tokenizer hashed(int buckets, bool lowercase);
  static Tokenizer wordpiece(std::vector<std::string> vocab, bool lowercase);

  // [CLS] pieces... [SEP], keeping at most max_len ids in total.
  std::vector<int> encode(std::string_view text, int max_len, bool& truncated,
                          int& pieces) const;
  std::vector<std::string> pieces(std::string_view text) const;

  int vocab_size() const;
  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }

  nlohmann::ordered_json to_json() const;
  static Tokenizer from_json(const nlohmann::ordered_json& j);

 private:
  int piece_id(std::string_view piece) const;

  std::string kind_;
  bool lowercase_ = true;
  int buckets_ = 0;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  int unk_ = 1, cls_ = 2, sep_ = 3;
};

struct Backbone {
  std::string id;
  EncoderConfig config;
  Tokenizer tokenizer;
  // Encoder parameters named as by declare_encoder(); empty means random.
  std::optional<nn::ParameterStore> weights;
};

// "compact-encoder" is built in (random initialization, hashed words);
// "file:<path>" reads a backbone container. Anything else is a
// ValidationError.
Backbone resolve_backbone(const std::string& id);
void save_backbone(const std::string& path, const EncoderConfig& config, const Tokenizer& tokenizer,
                   const nn::ParameterStore& weights);

// Indices of the encoder parameters inside a ParameterStore.
struct EncoderParams {
  std::size_t word = 0, position = 0, type = 0, emb_gamma = 0, emb_beta = 0;
  struct Layer {
    std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, attn_gamma, attn_beta;
    std::size_t in_w, in_b, out_w, out_b, ffn_gamma, ffn_beta;
  };
  std::vector<Layer> layers;
};

// Adds the encoder parameters ("encoder.*") with random initialization.
EncoderParams declare_encoder(nn::ParameterStore& params, const EncoderConfig& c,
                              std::uint64_t seed);

// Final hidden states (T x hidden) of a post-LN encoder.
nn::Var encode_sequence(nn::Graph& g, const EncoderParams& p, const EncoderConfig& c,
                        const std::vector<int>& ids);

}  // namespace normprior::modelzoo
