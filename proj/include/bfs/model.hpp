#ifndef BFS_MODEL_HPP
#define BFS_MODEL_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bfs/bfs_trace.hpp"
#include "bfs/nn_ops.hpp"
#include "bfs/spectra.hpp"
#include "bfs/tensor.hpp"

namespace bfs {

// One convolution stage: geometry plus whether batch norm and ReLU
// follow it.
struct ConvSpec {
  std::size_t kh = 3, kw = 3;
  std::size_t stride_f = 1, stride_t = 1;
  bool same = true;
  std::size_t c_in = 1, c_out = 64;
  bool bn = true;
  bool relu = true;
};

// Stem (conv + BN + ReLU + frequency maxpool), a residual stage, and a
// plain convolutional head. Every layer must preserve the time extent;
// the composed frequency map must land on exactly 1.
struct ArchitectureSpec {
  std::size_t input_freq = 151;
  ConvSpec stem;
  std::size_t pool_extent = 2;
  std::size_t pool_stride = 2;
  bool pool_ceil = true;  // odd final window padded with -inf
  std::size_t n_resblocks = 6;
  std::size_t res_channels = 64;
  std::vector<ConvSpec> head;

  // The published layout: 3x3 stem to 64 channels, pool 151->76, six
  // 64-channel ResBlocks, then seven 7x1/3x1 head layers mapping 76->1.
  static ArchitectureSpec default_spec();

  std::size_t out_freq() const;     // composed frequency extent
  std::size_t time_halo() const;    // cumulative time receptive-field radius
  void validate() const;            // throws on shape-map violations
};

struct ParamRec {
  std::string name;
  nn::Tensor* value = nullptr;
  nn::Tensor* grad = nullptr;  // null for running statistics
  bool trainable = false;
};

namespace detail {
class Node;
}

// The assembled network. Training (forward in train mode + backward) is
// single-writer; inference with fixed weights does not mutate the
// network and is safe for concurrent readers.
class Network {
 public:
  explicit Network(const ArchitectureSpec& spec);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  ~Network();

  // Uniform init on +-sqrt(6/(fan_in+fan_out)) per weight tensor; biases
  // and BN beta zero, BN gamma one. Deterministic in the seed and
  // independent of traversal order.
  void init_params(std::uint64_t seed);

  nn::Tensor train_forward(nn::Tensor x);
  nn::Tensor backward(nn::Tensor grad_out);  // fills param grads
  nn::Tensor infer(const nn::Tensor& x) const;

  std::vector<ParamRec> params();  // spec order, unique names
  const ArchitectureSpec& spec() const { return spec_; }

 private:
  ArchitectureSpec spec_;
  std::vector<std::unique_ptr<detail::Node>> nodes_;
};

Network build_network(const ArchitectureSpec& spec);

nn::Tensor bgs_to_tensor(const DistributedBgs& data);

// Predictions for every trace of a (peak-normalized, matching-frequency)
// input. Train mode leaves caches behind for a subsequent backward.
std::vector<double> forward_bfs(Network& net, const DistributedBgs& data, nn::BnMode mode);

struct TrainConfig {
  std::size_t epochs = 22;
  std::size_t updates_per_epoch = 375;
  std::size_t batch_size = 8;
  std::size_t traces_per_sample = 224;
  double alpha0 = 1e-3;
  double decay = 1e-4;
  enum class LrRule { kInverseTime, kLinear } lr_rule = LrRule::kInverseTime;
  bool fixed_corpus = false;  // pregenerate one epoch corpus, reshuffle per epoch
  std::uint64_t seed = 0;

  bool valid() const {
    return updates_per_epoch > 0 && batch_size > 0 && traces_per_sample > 0 &&
           alpha0 >= 0 && decay >= 0;
  }
  double lr_at(std::size_t update) const;
};

// Serialized network: version, canonical metadata text, and named f64
// records (weights, biases, BN parameters and running statistics) in
// spec order.
struct ModelCheckpoint {
  std::uint32_t version = 1;
  std::string metadata_json;
  std::vector<std::pair<std::string, std::vector<double>>> records;

  ArchitectureSpec arch() const;  // parsed out of the metadata
};

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<double> loss_history;  // one entry per update
};

// Fresh simulated batches every update (or a fixed reshuffled corpus),
// MSE loss on normalized BFS targets, Adam with the configured
// learning-rate decay. Deterministic given config.seed. A progress
// callback, when set, is invoked after every update. The default
// architecture expects sweep.n_points to match its input extent; pass an
// explicit spec to train a reduced network.
TrainResult train(const TrainConfig& config, const SimRanges& ranges, const SweepRange& sweep,
                  const std::function<void(std::size_t update, std::size_t total, double loss)>&
                      progress = nullptr,
                  const ArchitectureSpec* arch_override = nullptr);

ModelCheckpoint snapshot_checkpoint(Network& net, const std::string& metadata_json);
Network network_from_checkpoint(const ModelCheckpoint& ckpt);

// End-to-end extraction: peak-normalize, resample the frequency grid to
// the architecture's input extent when needed, run inference in chunks
// along the fiber axis (bit-identical to one full pass), return the
// normalized BFS per position.
BfsTrace infer_distributed(const ModelCheckpoint& ckpt, const DistributedBgs& data);
BfsTrace infer_distributed(const Network& net, const DistributedBgs& data);

// Linear interpolation onto n_points frequency samples over the same
// sweep endpoints.
DistributedBgs resample_frequency(const DistributedBgs& data, std::size_t n_points);

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::string& path);

std::string make_train_metadata(const ArchitectureSpec& arch, const TrainConfig& config,
                                const SimRanges& ranges, double final_loss,
                                std::size_t update_count);

}  // namespace bfs

#endif
