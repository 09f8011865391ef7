// Stacked bidirectional LSTM over word embeddings; the final states of every
// layer and direction feed a ReLU layer and then the class layer.

#include <charconv>
#include <cmath>
#include <unordered_map>

#include "families.hpp"
#include "normprior/error.hpp"

namespace normprior::modelzoo::detail {

using nlohmann::ordered_json;

namespace {

constexpr int kBuckets = 1 << 14;
constexpr int kFcWidth = 512;

struct WordVectors {
  std::vector<std::string> vocab;
  nn::Matrix vectors;
};

bool is_count_header(const std::vector<std::string_view>& fields) {
  if (fields.size() != 2) return false;
  for (auto f : fields) {
    long v = 0;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size()) return false;
  }
  return true;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

WordVectors load_word_vectors(const std::string& path) {
  const std::string data = text::read_file(path);
  std::vector<std::string> vocab;
  std::vector<float> values;
  std::unordered_map<std::string, int> seen;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < data.size()) {
    auto nl = data.find('\n', pos);
    if (nl == std::string::npos) nl = data.size();
    std::string_view line(data.data() + pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (line_no == 1 && is_count_header(fields)) continue;
    if (fields.size() < 2) throw RecordError(path, line_no, "vector", "no values after token");
    if (dim == 0) dim = fields.size() - 1;
    if (fields.size() - 1 != dim) {
      throw RecordError(path, line_no, "vector",
                        "expected " + std::to_string(dim) + " values, got " +
                            std::to_string(fields.size() - 1));
    }
    std::string token(fields[0]);
    if (seen.count(token)) continue;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      float v = 0;
      auto [p, ec] = std::from_chars(fields[k].data(), fields[k].data() + fields[k].size(), v);
      if (ec != std::errc() || p != fields[k].data() + fields[k].size() || !std::isfinite(v)) {
        throw RecordError(path, line_no, "vector", "not a number: " + std::string(fields[k]));
      }
      values.push_back(v);
    }
    seen.emplace(token, static_cast<int>(vocab.size()));
    vocab.push_back(std::move(token));
  }
  if (vocab.empty()) throw ValidationError(path + ": no word vectors");
  WordVectors wv;
  wv.vocab = std::move(vocab);
  wv.vectors = Eigen::Map<nn::Matrix>(values.data(), static_cast<nn::Index>(wv.vocab.size()),
                                      static_cast<nn::Index>(dim));
  return wv;
}

class Recurrent final : public Classifier {
 public:
  Recurrent(const ModelSpec& spec, ordered_json state, std::uint64_t seed)
      : state_(std::move(state)) {
    const int h = spec.hidden_size;
    const int layers = spec.recurrent_layers;
    const int dim = state_.at("embedding_dim").get<int>();
    static_ = state_.at("embedding").get<std::string>() == "pretrained_static";
    int rows = 0;
    if (static_) {
      const auto& vocab = state_.at("vocab");
      for (std::size_t i = 0; i < vocab.size(); ++i) index_.emplace(vocab[i].get<std::string>(), static_cast<int>(i));
      rows = static_cast<int>(vocab.size());
      table_ = params_.add("embedding", nn::Matrix::Zero(rows, dim), true, /*trainable=*/false);
    } else {
      buckets_ = state_.at("buckets").get<int>();
      auto rng = param_rng(seed, "embedding");
      table_ = params_.add("embedding", uniform_matrix(rng, buckets_, dim, 0.1), true);
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    int in = dim;
    for (int l = 0; l < layers; ++l) {
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string base = "lstm." + std::to_string(l) + "." + dir + ".";
        Cell c;
        auto r1 = param_rng(seed, base + "w_ih");
        c.w_ih = params_.add(base + "w_ih", uniform_matrix(r1, in, 4 * h, bound));
        auto r2 = param_rng(seed, base + "w_hh");
        c.w_hh = params_.add(base + "w_hh", uniform_matrix(r2, h, 4 * h, bound));
        nn::Matrix b = nn::Matrix::Zero(1, 4 * h);
        b.middleCols(h, h).setOnes();  // forget gate starts open
        c.bias = params_.add(base + "bias", std::move(b));
        cells_.push_back(c);
      }
      in = 2 * h;
    }
    const int feat = 2 * layers * h;
    auto r3 = param_rng(seed, "fc.w");
    fc_w_ = params_.add("fc.w", uniform_matrix(r3, feat, kFcWidth, std::sqrt(6.0 / feat)));
    fc_b_ = params_.add("fc.b", nn::Matrix::Zero(1, kFcWidth));
    auto r4 = param_rng(seed, "out.w");
    out_w_ = params_.add("out.w", uniform_matrix(r4, kFcWidth, spec.num_classes,
                                                 1.0 / std::sqrt(static_cast<double>(kFcWidth))));
    out_b_ = params_.add("out.b", nn::Matrix::Zero(1, spec.num_classes));
  }

  void set_vectors(nn::Matrix m) { params_[table_].value = std::move(m); }

  std::unique_ptr<Classifier> clone() const override { return std::make_unique<Recurrent>(*this); }

  Encoded encode(std::string_view text, int max_seq_len) const override {
    Encoded e;
    for (const auto& tok : capped_tokens(text, true, max_seq_len, e)) {
      if (static_) {
        auto it = index_.find(tok);
        e.ids.push_back(it == index_.end() ? -1 : it->second);
      } else {
        e.ids.push_back(bucket(tok, buckets_));
      }
    }
    if (e.ids.empty()) e.ids.push_back(-1);
    return e;
  }

  nn::Var logits(nn::Graph& g, const Encoded& x) const override {
    nn::Var seq = g.gather(table_, x.ids);
    const nn::Index t = seq.rows();
    std::vector<nn::Var> finals;
    for (std::size_t c = 0; c < cells_.size(); c += 2) {
      const Cell& f = cells_[c];
      const Cell& b = cells_[c + 1];
      nn::Var fw = nn::lstm(seq, g.param(f.w_ih), g.param(f.w_hh), g.param(f.bias), false);
      nn::Var bw = nn::lstm(seq, g.param(b.w_ih), g.param(b.w_hh), g.param(b.bias), true);
      finals.push_back(nn::slice_rows(fw, t - 1, 1));
      finals.push_back(nn::slice_rows(bw, 0, 1));
      seq = nn::concat_cols({fw, bw});
    }
    nn::Var hidden = nn::relu(
        nn::add_bias(nn::matmul(nn::concat_cols(finals), g.param(fc_w_)), g.param(fc_b_)));
    return nn::add_bias(nn::matmul(hidden, g.param(out_w_)), g.param(out_b_));
  }

  ordered_json state() const override { return state_; }

 private:
  struct Cell {
    std::size_t w_ih = 0, w_hh = 0, bias = 0;
  };
  ordered_json state_;
  bool static_ = false;
  int buckets_ = 0;
  std::unordered_map<std::string, int> index_;
  std::size_t table_ = 0;
  std::vector<Cell> cells_;
  std::size_t fc_w_ = 0, fc_b_ = 0, out_w_ = 0, out_b_ = 0;
};

}  // namespace

std::unique_ptr<Classifier> build_recurrent(const ModelSpec& spec, const ordered_json* state,
                                            std::uint64_t seed) {
  if (state) return std::make_unique<Recurrent>(spec, *state, seed);
  if (effective_embedding(spec) == Embedding::kPretrainedStatic) {
    if (!spec.embeddings_path) {
      throw ValidationError("pretrained_static embeddings need an embeddings file");
    }
    WordVectors wv = load_word_vectors(*spec.embeddings_path);
    ordered_json st = {{"embedding", "pretrained_static"},
                       {"embedding_dim", wv.vectors.cols()},
                       {"lowercase", true},
                       {"vocab", wv.vocab}};
    auto model = std::make_unique<Recurrent>(spec, std::move(st), seed);
    model->set_vectors(std::move(wv.vectors));
    return model;
  }
  ordered_json st = {{"embedding", "learned"},
                     {"embedding_dim", spec.embedding_dim},
                     {"lowercase", true},
                     {"buckets", kBuckets}};
  return std::make_unique<Recurrent>(spec, std::move(st), seed);
}

}  // namespace normprior::modelzoo::detail
