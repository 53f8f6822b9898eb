#include "bfs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bfs::nn {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& params,
                        double h) {
  Tensor grad(params.shape());
  Tensor probe = params;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + h;
    const double up = f(probe);
    probe.data()[i] = saved - h;
    const double down = f(probe);
    probe.data()[i] = saved;
    grad.data()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_rel_error(const Tensor& a, const Tensor& b, double floor) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("max_rel_error: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.count(); ++i) {
    const double diff = std::fabs(a.data()[i] - b.data()[i]);
    const double scale = std::max({std::fabs(a.data()[i]), std::fabs(b.data()[i]), floor});
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

}  // namespace bfs::nn
