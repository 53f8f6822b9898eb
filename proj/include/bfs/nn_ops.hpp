#ifndef BFS_NN_OPS_HPP
#define BFS_NN_OPS_HPP

#include <cstdint>
#include <vector>

#include "bfs/tensor.hpp"

namespace bfs::nn {

enum class Padding { kSame, kValid };

// 2-D cross-correlation layer. Weights are laid out as
// (kernel_freq, kernel_time, c_in, c_out) on the tensor axes (f,t,c,b).
struct ConvLayer {
  Tensor w;
  Tensor b;  // shape (1,1,1,c_out)
  std::size_t stride_f = 1;
  std::size_t stride_t = 1;
  Padding pad = Padding::kSame;

  std::size_t kh() const { return w.shape().f; }
  std::size_t kw() const { return w.shape().t; }
  std::size_t c_in() const { return w.shape().c; }
  std::size_t c_out() const { return w.shape().b; }
};

// Output spatial extent along one axis: same -> ceil(n/stride),
// valid -> floor((n-k)/stride)+1.
std::size_t conv_out_extent(std::size_t n, std::size_t k, std::size_t stride, Padding pad);

// Same-padding totals: low side gets the smaller half, the extra sample
// pads the high-index side.
void same_pad_amounts(std::size_t n, std::size_t k, std::size_t stride, std::size_t& lo,
                      std::size_t& hi);

Tensor conv2d_forward(const Tensor& x, const ConvLayer& layer);

// grad_in is the stride/padding adjoint of the forward pass (the
// full-convolution with 180-degree-rotated weights at unit stride);
// grad_w and grad_b are exact loss gradients. x is the cached forward
// input.
Tensor conv2d_backward(const Tensor& grad_out, const Tensor& x, const ConvLayer& layer,
                       Tensor& grad_w, Tensor& grad_b);

// Max pooling over the frequency axis (extent 2, stride 2), ceil mode:
// an odd final window is padded with -inf. The cache records flat argmax
// positions for the backward scatter.
struct PoolCache {
  Shape in_shape;
  std::vector<std::uint32_t> argmax;  // frequency index per output element
};

Tensor maxpool_forward(const Tensor& x, PoolCache& cache, std::size_t extent = 2,
                       std::size_t stride = 2);
Tensor maxpool_backward(const Tensor& grad_out, const PoolCache& cache);

// Elementwise max(x, 0); derivative at exactly 0 is 0. The in-place
// variant records the active mask for the backward pass.
Tensor relu(const Tensor& x);
void relu_inplace(Tensor& x, std::vector<std::uint8_t>& mask);
Tensor relu_backward(const Tensor& grad_out, const std::vector<std::uint8_t>& mask);

enum class BnMode { kTrain, kInfer };

struct BatchNormLayer {
  Tensor gamma;         // (1,1,c,1)
  Tensor beta;          // (1,1,c,1)
  Tensor running_mean;  // (1,1,c,1)
  Tensor running_var;   // (1,1,c,1)
  double eps = 1e-5;
  double momentum = 0.9;

  explicit BatchNormLayer(std::size_t channels = 1);
};

struct BnCache {
  Tensor xhat;
  std::vector<double> inv_std;  // per channel
  std::vector<double> gamma;    // snapshot used in forward
};

// Train mode normalizes each channel over (f,t,b) with batch statistics
// (population form) and updates the running averages; infer mode applies
// the running statistics. Train mode requires at least 2 elements per
// channel.
Tensor batchnorm_forward(const Tensor& x, BatchNormLayer& layer, BnMode mode,
                         BnCache* cache = nullptr);
Tensor batchnorm_backward(const Tensor& grad_out, const BnCache& cache, Tensor& grad_gamma,
                          Tensor& grad_beta);

// Mean of squared differences over all elements and its gradient w.r.t.
// pred: 2 (pred - target) / count.
double mse_loss(const Tensor& pred, const Tensor& target, Tensor& grad_pred);

}  // namespace bfs::nn

#endif
