#include "families.hpp"
#include "normprior/text.hpp"

namespace normprior::modelzoo::detail {

nn::Matrix uniform_matrix(Rng& rng, nn::Index rows, nn::Index cols, double bound) {
  nn::Matrix m(rows, cols);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  return m;
}

std::vector<std::string> capped_tokens(std::string_view text, bool lowercase, int max_tokens,
                                       Encoded& out) {
  auto toks = text::tokenize(text, lowercase);
  if (static_cast<int>(toks.size()) > max_tokens) {
    toks.resize(static_cast<std::size_t>(max_tokens));
    out.truncated = true;
  }
  out.tokens = static_cast<int>(toks.size());
  return toks;
}

}  // namespace normprior::modelzoo::detail
