#include "normprior/modelzoo/backbone.hpp"

#include <cmath>

#include "families.hpp"
#include "normprior/error.hpp"
#include "normprior/modelzoo/container.hpp"
#include "normprior/text.hpp"

namespace normprior::modelzoo {

using nlohmann::ordered_json;

namespace {

constexpr std::string_view kMagic = "NORMPRIOR-BACKBONE";
constexpr int kVersion = 1;
constexpr int kCompactBuckets = 8192;

bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

// Whitespace split with every ASCII punctuation mark as its own word.
std::vector<std::string> basic_words(std::string_view s, bool lowercase) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else if (c < 32 || c == 127) {
      continue;
    } else {
      cur.push_back(lowercase && c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                                       : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

}  // namespace

ordered_json to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size},       {"hidden", c.hidden},
          {"layers", c.layers},               {"heads", c.heads},
          {"intermediate", c.intermediate},   {"max_positions", c.max_positions},
          {"type_vocab", c.type_vocab},       {"layer_norm_eps", c.layer_norm_eps}};
}

EncoderConfig encoder_config_from_json(const ordered_json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.intermediate = j.at("intermediate").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.type_vocab = j.at("type_vocab").get<int>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  if (c.vocab_size < 5 || c.hidden < 1 || c.layers < 1 || c.heads < 1 || c.hidden % c.heads != 0 ||
      c.intermediate < 1 || c.max_positions < 3 || c.type_vocab < 1 || !(c.layer_norm_eps > 0)) {
    throw ValidationError("invalid encoder config: " + j.dump());
  }
  return c;
}

Tokenizer Tokenizer::hashed(int buckets, bool lowercase) {
  Tokenizer t;
  t.kind_ = "hashed";
  t.buckets_ = buckets;
  t.lowercase_ = lowercase;
  return t;
}

Tokenizer Tokenizer::wordpiece(std::vector<std::string> vocab, bool lowercase) {
  Tokenizer t;
  t.kind_ = "wordpiece";
  t.lowercase_ = lowercase;
  t.vocab_ = std::move(vocab);
  for (std::size_t i = 0; i < t.vocab_.size(); ++i) t.index_.emplace(t.vocab_[i], static_cast<int>(i));
  auto special = [&](const char* name) {
    auto it = t.index_.find(name);
    if (it == t.index_.end()) throw ValidationError(std::string("vocabulary lacks ") + name);
    return it->second;
  };
  t.unk_ = special("[UNK]");
  t.cls_ = special("[CLS]");
  t.sep_ = special("[SEP]");
  return t;
}

int Tokenizer::vocab_size() const {
  return kind_ == "hashed" ? 4 + buckets_ : static_cast<int>(vocab_.size());
}

int Tokenizer::piece_id(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? -1 : it->second;
}

std::vector<std::string> Tokenizer::pieces(std::string_view s) const {
  if (kind_ == "hashed") return text::tokenize(s, lowercase_);
  std::vector<std::string> out;
  for (const auto& word : basic_words(s, lowercase_)) {
    if (word.size() > 100) {
      out.push_back("[UNK]");
      continue;
    }
    std::vector<std::string> sub;
    std::size_t start = 0;
    bool bad = false;
    while (start < word.size()) {
      std::size_t end = word.size();
      std::string found;
      while (start < end) {
        std::string cand = (start > 0 ? "##" : "") + word.substr(start, end - start);
        if (index_.count(cand)) {
          found = std::move(cand);
          break;
        }
        --end;
      }
      if (found.empty()) {
        bad = true;
        break;
      }
      sub.push_back(std::move(found));
      start = end;
    }
    if (bad) {
      out.push_back("[UNK]");
    } else {
      out.insert(out.end(), sub.begin(), sub.end());
    }
  }
  return out;
}

std::vector<int> Tokenizer::encode(std::string_view s, int max_len, bool& truncated,
                                   int& used) const {
  auto ps = pieces(s);
  const auto room = static_cast<std::size_t>(std::max(0, max_len - 2));
  truncated = ps.size() > room;
  if (truncated) ps.resize(room);
  used = static_cast<int>(ps.size());
  std::vector<int> ids{cls_};
  for (const auto& p : ps) {
    if (kind_ == "hashed") {
      ids.push_back(4 + detail::bucket(p, buckets_));
    } else {
      const int id = piece_id(p);
      ids.push_back(id < 0 ? unk_ : id);
    }
  }
  ids.push_back(sep_);
  return ids;
}

ordered_json Tokenizer::to_json() const {
  if (kind_ == "hashed") return {{"kind", kind_}, {"lowercase", lowercase_}, {"buckets", buckets_}};
  return {{"kind", kind_}, {"lowercase", lowercase_}, {"vocab", vocab_}};
}

Tokenizer Tokenizer::from_json(const ordered_json& j) {
  const auto kind = j.at("kind").get<std::string>();
  const bool lower = j.at("lowercase").get<bool>();
  if (kind == "hashed") return hashed(j.at("buckets").get<int>(), lower);
  if (kind == "wordpiece") return wordpiece(j.at("vocab").get<std::vector<std::string>>(), lower);
  throw ValidationError("unknown tokenizer kind: " + kind);
}

EncoderParams declare_encoder(nn::ParameterStore& params, const EncoderConfig& c,
                              std::uint64_t seed) {
  const double bound = 0.02 * std::sqrt(3.0);  // matches a 0.02 std normal
  auto rand = [&](const std::string& name, int rows, int cols, bool sparse = false) {
    auto rng = detail::param_rng(seed, name);
    return params.add(name, detail::uniform_matrix(rng, rows, cols, bound), sparse);
  };
  auto ones = [&](const std::string& name) { return params.add(name, nn::Matrix::Ones(1, c.hidden)); };
  auto zeros = [&](const std::string& name, int cols) {
    return params.add(name, nn::Matrix::Zero(1, cols));
  };
  EncoderParams p;
  p.word = rand("encoder.embeddings.word", c.vocab_size, c.hidden, true);
  p.position = rand("encoder.embeddings.position", c.max_positions, c.hidden, true);
  p.type = rand("encoder.embeddings.type", c.type_vocab, c.hidden, true);
  p.emb_gamma = ones("encoder.embeddings.ln.gamma");
  p.emb_beta = zeros("encoder.embeddings.ln.beta", c.hidden);
  for (int l = 0; l < c.layers; ++l) {
    const std::string b = "encoder.layer" + std::to_string(l) + ".";
    EncoderParams::Layer L{};
    L.q_w = rand(b + "attn.q.w", c.hidden, c.hidden);
    L.q_b = zeros(b + "attn.q.b", c.hidden);
    L.k_w = rand(b + "attn.k.w", c.hidden, c.hidden);
    L.k_b = zeros(b + "attn.k.b", c.hidden);
    L.v_w = rand(b + "attn.v.w", c.hidden, c.hidden);
    L.v_b = zeros(b + "attn.v.b", c.hidden);
    L.o_w = rand(b + "attn.out.w", c.hidden, c.hidden);
    L.o_b = zeros(b + "attn.out.b", c.hidden);
    L.attn_gamma = ones(b + "attn.ln.gamma");
    L.attn_beta = zeros(b + "attn.ln.beta", c.hidden);
    L.in_w = rand(b + "ffn.in.w", c.hidden, c.intermediate);
    L.in_b = zeros(b + "ffn.in.b", c.intermediate);
    L.out_w = rand(b + "ffn.out.w", c.intermediate, c.hidden);
    L.out_b = zeros(b + "ffn.out.b", c.hidden);
    L.ffn_gamma = ones(b + "ffn.ln.gamma");
    L.ffn_beta = zeros(b + "ffn.ln.beta", c.hidden);
    p.layers.push_back(L);
  }
  return p;
}

nn::Var encode_sequence(nn::Graph& g, const EncoderParams& p, const EncoderConfig& c,
                        const std::vector<int>& ids) {
  const int t = static_cast<int>(ids.size());
  if (t > c.max_positions) throw ContractViolation("sequence longer than max_positions");
  std::vector<int> positions(ids.size()), types(ids.size(), 0);
  for (int i = 0; i < t; ++i) positions[static_cast<std::size_t>(i)] = i;
  const auto eps = static_cast<float>(c.layer_norm_eps);
  auto linear = [&g](nn::Var x, std::size_t w, std::size_t b) {
    return nn::add_bias(nn::matmul(x, g.param(w)), g.param(b));
  };
  nn::Var x = nn::add(nn::add(g.gather(p.word, ids), g.gather(p.position, positions)),
                      g.gather(p.type, types));
  x = nn::layer_norm(x, g.param(p.emb_gamma), g.param(p.emb_beta), eps);
  const int dh = c.hidden / c.heads;
  const float inv = 1.0f / std::sqrt(static_cast<float>(dh));
  for (const auto& L : p.layers) {
    nn::Var q = linear(x, L.q_w, L.q_b);
    nn::Var k = linear(x, L.k_w, L.k_b);
    nn::Var v = linear(x, L.v_w, L.v_b);
    std::vector<nn::Var> heads;
    for (int h = 0; h < c.heads; ++h) {
      nn::Var qh = nn::slice_cols(q, h * dh, dh);
      nn::Var kh = nn::slice_cols(k, h * dh, dh);
      nn::Var vh = nn::slice_cols(v, h * dh, dh);
      nn::Var attn = nn::softmax_rows(nn::scale(nn::matmul_nt(qh, kh), inv));
      heads.push_back(nn::matmul(attn, vh));
    }
    nn::Var ctx = heads.size() == 1 ? heads[0] : nn::concat_cols(heads);
    x = nn::layer_norm(nn::add(x, linear(ctx, L.o_w, L.o_b)), g.param(L.attn_gamma),
                       g.param(L.attn_beta), eps);
    nn::Var ff = linear(nn::gelu(linear(x, L.in_w, L.in_b)), L.out_w, L.out_b);
    x = nn::layer_norm(nn::add(x, ff), g.param(L.ffn_gamma), g.param(L.ffn_beta), eps);
  }
  return x;
}

Backbone resolve_backbone(const std::string& id) {
  if (id == "compact-encoder") {
    Backbone b{id, {}, Tokenizer::hashed(kCompactBuckets, true), std::nullopt};
    b.config.vocab_size = b.tokenizer.vocab_size();
    return b;
  }
  if (id.rfind("file:", 0) == 0) {
    const std::string path = id.substr(5);
    Container c = read_container(path, kMagic, kVersion);
    Backbone b{id, {}, Tokenizer::hashed(1, true), std::nullopt};
    try {
      b.config = encoder_config_from_json(c.header.at("config"));
      b.tokenizer = Tokenizer::from_json(c.header.at("tokenizer"));
    } catch (const nlohmann::json::exception& e) {
      throw CorruptModelError(path + ": malformed backbone header: " + e.what());
    }
    if (b.tokenizer.vocab_size() != b.config.vocab_size) {
      throw CorruptModelError(path + ": tokenizer and embedding table disagree on vocabulary size");
    }
    nn::ParameterStore expected;
    declare_encoder(expected, b.config, 0);
    if (expected.size() != c.params.size()) throw CorruptModelError(path + ": unexpected tensor count");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (expected[i].name != c.params[i].name ||
          expected[i].value.rows() != c.params[i].value.rows() ||
          expected[i].value.cols() != c.params[i].value.cols()) {
        throw CorruptModelError(path + ": unexpected tensor " + c.params[i].name);
      }
    }
    b.weights = std::move(c.params);
    return b;
  }
  throw ValidationError("unknown backbone_id: " + id);
}

void save_backbone(const std::string& path, const EncoderConfig& config, const Tokenizer& tokenizer,
                   const nn::ParameterStore& weights) {
  write_container(path, kMagic, kVersion,
                  {{"config", to_json(config)}, {"tokenizer", tokenizer.to_json()}}, weights);
}

}  // namespace normprior::modelzoo
