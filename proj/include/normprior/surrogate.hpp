#pragma once

#include <cstdint>
#include <vector>

#include "normprior/corpus.hpp"

namespace normprior::corpus {

// Template families for synthetic paired exemplars. kEveryday mirrors the
// children's-etiquette register; kAdventure is a disjoint fictional register
// that shares only part of its behaviour vocabulary with kEveryday, used as a
// transfer target.
enum class SurrogateDomain { kEveryday, kAdventure };

// Deterministic for a given (n_pairs, seed, domain). Pairs are distinct while
// the template space allows; beyond that, texts are reused. Throws
// ValidationError when n_pairs < 1.
std::vector<PanelPair> generate_surrogate(
    int n_pairs, std::uint64_t seed,
    SurrogateDomain domain = SurrogateDomain::kEveryday);

// Upper bound on the number of distinct pairs the templates can produce.
std::uint64_t surrogate_capacity(SurrogateDomain domain);

}  // namespace normprior::corpus
