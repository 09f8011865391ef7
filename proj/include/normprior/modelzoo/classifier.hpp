#pragma once

// Family implementations behind ModelHandle. Exposed for tests and tools.

#include <memory>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "normprior/modelzoo.hpp"
#include "normprior/nn/graph.hpp"

namespace normprior::modelzoo {

struct Encoded {
  std::vector<int> ids;
  bool truncated = false;
  int tokens = 0;
};

class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::unique_ptr<Classifier> clone() const = 0;
  virtual Encoded encode(std::string_view text, int max_seq_len) const = 0;
  // 1 x K logits for one encoded example.
  virtual nn::Var logits(nn::Graph& g, const Encoded& x) const = 0;
  // Non-parameter state needed to rebuild the model (vocabularies, sizes).
  virtual nlohmann::ordered_json state() const = 0;

  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

 protected:
  nn::ParameterStore params_;
};

// Random initialization from the spec. Reads embedding or backbone files.
std::unique_ptr<Classifier> make_classifier(const ModelSpec& spec, std::uint64_t seed);

// Rebuilds a model from saved state. The parameter layout must match what
// the family expects, name for name and shape for shape, or
// CorruptModelError is thrown.
std::unique_ptr<Classifier> restore_classifier(const ModelSpec& spec,
                                               const nlohmann::ordered_json& state,
                                               nn::ParameterStore params);

// Softmax over two logits in double precision; index 0 is normative.
double normative_probability(const nn::Matrix& logits);

inline int label_index(Label l) { return l == Label::kNormative ? 0 : 1; }

}  // namespace normprior::modelzoo
