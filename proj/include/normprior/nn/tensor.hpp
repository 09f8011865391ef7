#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace normprior::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
  // Lookup tables: gradients arrive as the handful of rows a batch touched.
  bool sparse = false;
};

class ParameterStore {
 public:
  // Throws ContractViolation on a repeated name.
  std::size_t add(std::string name, Matrix init, bool sparse = false, bool trainable = true);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t count() const;  // total scalar count

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // SHA-256 over (name, '\0', rows, cols, float32 LE data) in insertion order.
  std::string digest() const;

 private:
  std::vector<Parameter> params_;
};

// Per-parameter gradient buffers for one optimizer step.
class Gradients {
 public:
  explicit Gradients(const ParameterStore& params);

  void add_dense(std::size_t p, const Matrix& g);
  void add_row(std::size_t p, Index row, const Eigen::Ref<const RowVector>& g);
  void clear();
  void scale(float s);
  double squared_norm() const;

  bool has_dense(std::size_t p) const { return slots_[p].touched; }
  const Matrix& dense(std::size_t p) const { return slots_[p].dense; }
  const std::map<Index, RowVector>& rows(std::size_t p) const { return slots_[p].rows; }
  std::size_t size() const { return slots_.size(); }

 private:
  struct Slot {
    bool touched = false;
    Matrix dense;
    std::map<Index, RowVector> rows;
  };
  std::vector<Slot> slots_;
};

}  // namespace normprior::nn
