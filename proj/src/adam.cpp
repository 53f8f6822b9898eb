#include "bfs/adam.hpp"

#include <cmath>
#include <stdexcept>

#include "bfs/errors.hpp"

namespace bfs::nn {

void adam_step(Tensor& params, const Tensor& grads, AdamState& state, const std::string& name) {
  if (!(params.shape() == grads.shape()) || !(params.shape() == state.m.shape())) {
    throw std::invalid_argument("adam_step: shape mismatch for " + name);
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  double* p = params.data();
  double* m = state.m.data();
  double* v = state.v.data();
  const double* g = grads.data();
  for (std::size_t i = 0; i < params.count(); ++i) {
    if (!std::isfinite(g[i])) {
      throw NumericError("adam_step: non-finite gradient in " +
                         (name.empty() ? std::string("parameter") : name));
    }
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    p[i] -= state.alpha * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace bfs::nn
