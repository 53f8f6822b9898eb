#ifndef BFS_ADAM_HPP
#define BFS_ADAM_HPP

#include <string>

#include "bfs/tensor.hpp"

namespace bfs::nn {

// Per-parameter-tensor Adam accumulators. The step count t is shared by
// callers that advance all tensors together; bias correction uses the
// incremented value.
struct AdamState {
  Tensor m;
  Tensor v;
  long long t = 0;
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(Shape shape, double alpha_ = 1e-3) : m(shape), v(shape), alpha(alpha_) {}
};

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  with t already
// incremented, mhat = m/(1-b1^t), vhat = v/(1-b2^t),
// theta <- theta - alpha mhat / (sqrt(vhat) + eps).
// `name` labels the parameter in non-finite-gradient errors.
void adam_step(Tensor& params, const Tensor& grads, AdamState& state,
               const std::string& name = "");

}  // namespace bfs::nn

#endif
