#pragma once

#include <map>
#include <memory>
#include <vector>

#include "normprior/nn/tensor.hpp"

namespace normprior::nn {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParameterStore& params, const Gradients& grads) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(float lr) : lr_(lr) {}
  void step(ParameterStore& params, const Gradients& grads) override;

 private:
  float lr_;
};

// Adam. Rows of sparse tables keep their own moments and are only updated
// when a batch touches them.
class Adam : public Optimizer {
 public:
  explicit Adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParameterStore& params, const Gradients& grads) override;

 private:
  struct Moments {
    Matrix m, v;
  };
  struct RowMoments {
    RowVector m, v;
  };
  float lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Moments> dense_;
  std::vector<std::map<Index, RowMoments>> rows_;
};

}  // namespace normprior::nn
