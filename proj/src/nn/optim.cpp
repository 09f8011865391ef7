#include "normprior/nn/optim.hpp"

#include <cmath>

namespace normprior::nn {

void Sgd::step(ParameterStore& params, const Gradients& grads) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    if (grads.has_dense(p)) params[p].value -= lr_ * grads.dense(p);
    for (const auto& [row, g] : grads.rows(p)) params[p].value.row(row) -= lr_ * g;
  }
}

void Adam::step(ParameterStore& params, const Gradients& grads) {
  if (dense_.size() < params.size()) {
    dense_.resize(params.size());
    rows_.resize(params.size());
  }
  ++t_;
  const float c1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float c2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  const float step = lr_ * std::sqrt(c2) / c1;
  const float eps = eps_ * std::sqrt(c2);
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    Matrix& w = params[p].value;
    if (grads.has_dense(p)) {
      auto& st = dense_[p];
      if (st.m.size() == 0) {
        st.m = Matrix::Zero(w.rows(), w.cols());
        st.v = Matrix::Zero(w.rows(), w.cols());
      }
      const Matrix& g = grads.dense(p);
      st.m = beta1_ * st.m + (1.0f - beta1_) * g;
      st.v = beta2_ * st.v + (1.0f - beta2_) * g.cwiseProduct(g);
      w.array() -= step * st.m.array() / (st.v.array().sqrt() + eps);
    }
    for (const auto& [row, g] : grads.rows(p)) {
      auto [it, fresh] = rows_[p].try_emplace(row);
      auto& st = it->second;
      if (fresh) {
        st.m = RowVector::Zero(w.cols());
        st.v = RowVector::Zero(w.cols());
      }
      st.m = beta1_ * st.m + (1.0f - beta1_) * g;
      st.v = beta2_ * st.v + (1.0f - beta2_) * g.cwiseProduct(g);
      w.row(row).array() -= step * st.m.array() / (st.v.array().sqrt() + eps);
    }
  }
}

}  // namespace normprior::nn
