#include "normprior/nn/tensor.hpp"

#include <bit>
#include <cstring>

#include "normprior/digest.hpp"
#include "normprior/error.hpp"

namespace normprior::nn {

static_assert(std::endian::native == std::endian::little, "float data is hashed as stored");

std::size_t ParameterStore::add(std::string name, Matrix init, bool sparse, bool trainable) {
  if (find(name)) throw ContractViolation("duplicate parameter: " + name);
  params_.push_back({std::move(name), std::move(init), trainable, sparse});
  return params_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::string ParameterStore::digest() const {
  Sha256 h;
  for (const auto& p : params_) {
    h.update(p.name);
    h.update("\0", 1);
    h.update_u64(static_cast<std::uint64_t>(p.value.rows()));
    h.update_u64(static_cast<std::uint64_t>(p.value.cols()));
    h.update(p.value.data(), sizeof(float) * static_cast<std::size_t>(p.value.size()));
  }
  return h.hex_digest();
}

Gradients::Gradients(const ParameterStore& params) : slots_(params.size()) {}

void Gradients::add_dense(std::size_t p, const Matrix& g) {
  auto& s = slots_[p];
  if (!s.touched) {
    s.dense = g;
    s.touched = true;
  } else {
    s.dense += g;
  }
}

void Gradients::add_row(std::size_t p, Index row, const Eigen::Ref<const RowVector>& g) {
  auto [it, inserted] = slots_[p].rows.try_emplace(row, g);
  if (!inserted) it->second += g;
}

void Gradients::clear() {
  for (auto& s : slots_) {
    s.touched = false;
    s.dense.resize(0, 0);
    s.rows.clear();
  }
}

void Gradients::scale(float f) {
  for (auto& s : slots_) {
    if (s.touched) s.dense *= f;
    for (auto& [_, r] : s.rows) r *= f;
  }
}

double Gradients::squared_norm() const {
  double total = 0;
  for (const auto& s : slots_) {
    if (s.touched) total += s.dense.cast<double>().squaredNorm();
    for (const auto& [_, r] : s.rows) total += r.cast<double>().squaredNorm();
  }
  return total;
}

}  // namespace normprior::nn
