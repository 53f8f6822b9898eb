#ifndef BFS_GRADCHECK_HPP
#define BFS_GRADCHECK_HPP

#include <functional>

#include "bfs/tensor.hpp"

namespace bfs::nn {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per element.
// Verification hook for the hand-written backward passes.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& params,
                        double h = 1e-5);

// Worst relative discrepancy between two gradient tensors, with an
// absolute floor so that jointly tiny entries do not dominate.
double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-6);

}  // namespace bfs::nn

#endif
