#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "normprior/modelzoo/classifier.hpp"
#include "normprior/rng.hpp"
#include "normprior/text.hpp"

namespace normprior::modelzoo::detail {

// state == nullptr builds a fresh model (reading any files the spec names);
// otherwise the model is shaped from saved state and its parameters are
// placeholders to be replaced.
std::unique_ptr<Classifier> build_linear(const ModelSpec& spec, const nlohmann::ordered_json* state,
                                         std::uint64_t seed);
std::unique_ptr<Classifier> build_recurrent(const ModelSpec& spec, const nlohmann::ordered_json* state,
                                            std::uint64_t seed);
std::unique_ptr<Classifier> build_pyramid(const ModelSpec& spec, const nlohmann::ordered_json* state,
                                          std::uint64_t seed);
std::unique_ptr<Classifier> build_transformer(const ModelSpec& spec, const nlohmann::ordered_json* state,
                                              std::uint64_t seed);

// Per-parameter generator so initial values do not depend on creation order.
inline Rng param_rng(std::uint64_t seed, std::string_view name) {
  return Rng(seed * 0x9E3779B97F4A7C15ULL ^ text::fnv1a(name));
}

nn::Matrix uniform_matrix(Rng& rng, nn::Index rows, nn::Index cols, double bound);

// Tokens capped at max_tokens, recording truncation in out.
std::vector<std::string> capped_tokens(std::string_view text, bool lowercase, int max_tokens,
                                       Encoded& out);

inline int bucket(std::string_view s, int buckets) {
  return static_cast<int>(text::fnv1a(s) % static_cast<std::uint64_t>(buckets));
}

}  // namespace normprior::modelzoo::detail
