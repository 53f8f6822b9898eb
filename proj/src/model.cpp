#include "bfs/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "bfs/adam.hpp"
#include "bfs/errors.hpp"
#include "bfs/rng.hpp"

namespace bfs {

ArchitectureSpec ArchitectureSpec::default_spec() {
  ArchitectureSpec s;
  s.input_freq = 151;
  s.stem = ConvSpec{3, 3, 1, 1, true, 1, 64, true, true};
  s.pool_extent = 2;
  s.pool_stride = 2;
  s.n_resblocks = 6;
  s.res_channels = 64;
  // 76 -> 76 -> 35 -> 15 -> 5 -> 3 -> 1 -> 1, kernels limited to 7x1/3x1.
  s.head = {
      ConvSpec{3, 1, 1, 1, true, 64, 64, true, true},
      ConvSpec{7, 1, 2, 1, false, 64, 64, true, true},
      ConvSpec{7, 1, 2, 1, false, 64, 64, true, true},
      ConvSpec{7, 1, 2, 1, false, 64, 64, true, true},
      ConvSpec{3, 1, 1, 1, false, 64, 64, true, true},
      ConvSpec{3, 1, 1, 1, false, 64, 64, true, true},
      ConvSpec{3, 1, 1, 1, true, 64, 1, false, false},
  };
  return s;
}

namespace {

std::size_t conv_freq_out(std::size_t f, const ConvSpec& c) {
  return nn::conv_out_extent(f, c.kh, c.stride_f, c.same ? nn::Padding::kSame
                                                         : nn::Padding::kValid);
}

void check_time_preserving(const ConvSpec& c, const char* where) {
  const bool ok = c.stride_t == 1 && (c.same || c.kw == 1);
  if (!ok) {
    throw std::invalid_argument(std::string("architecture: ") + where +
                                " does not preserve the time extent");
  }
}

}  // namespace

std::size_t ArchitectureSpec::out_freq() const {
  std::size_t f = input_freq;
  f = conv_freq_out(f, stem);
  f = (f + pool_stride - 1) / pool_stride;
  // ResBlock convs are same-padded stride 1 by construction.
  for (const ConvSpec& c : head) f = conv_freq_out(f, c);
  return f;
}

std::size_t ArchitectureSpec::time_halo() const {
  std::size_t halo = stem.kw / 2;
  halo += n_resblocks * (3 / 2);  // the 3x3 middle conv of each block
  for (const ConvSpec& c : head) halo += c.kw / 2;
  return halo;
}

void ArchitectureSpec::validate() const {
  if (input_freq < 3) throw std::invalid_argument("architecture: input_freq < 3");
  check_time_preserving(stem, "stem conv");
  if (stem.c_in != 1) throw std::invalid_argument("architecture: stem must take 1 channel");
  if (stem.c_out != res_channels) {
    throw std::invalid_argument("architecture: stem channels must match the residual stage");
  }
  if (pool_extent < 1 || pool_stride < 1) {
    throw std::invalid_argument("architecture: bad pool geometry");
  }
  std::size_t prev_c = res_channels;
  for (std::size_t i = 0; i < head.size(); ++i) {
    check_time_preserving(head[i], "head conv");
    if (head[i].c_in != prev_c) {
      throw std::invalid_argument("architecture: head channel chain broken at layer " +
                                  std::to_string(i));
    }
    prev_c = head[i].c_out;
  }
  if (head.empty() || head.back().c_out != 1) {
    throw std::invalid_argument("architecture: head must end in 1 channel");
  }
  if (out_freq() != 1) {
    throw std::invalid_argument("architecture: composed frequency map yields " +
                                std::to_string(out_freq()) + ", need exactly 1");
  }
}

namespace detail {

class Node {
 public:
  virtual ~Node() = default;
  virtual nn::Tensor train_forward(nn::Tensor x) = 0;
  virtual nn::Tensor backward(nn::Tensor grad) = 0;
  virtual nn::Tensor infer(nn::Tensor x) const = 0;
  virtual void collect(const std::string& prefix, std::vector<ParamRec>& out) = 0;
};

class ConvNode : public Node {
 public:
  ConvNode(const ConvSpec& spec) {
    layer_.w = nn::Tensor(nn::Shape{spec.kh, spec.kw, spec.c_in, spec.c_out});
    layer_.b = nn::Tensor(nn::Shape{1, 1, 1, spec.c_out});
    layer_.stride_f = spec.stride_f;
    layer_.stride_t = spec.stride_t;
    layer_.pad = spec.same ? nn::Padding::kSame : nn::Padding::kValid;
  }

  nn::Tensor train_forward(nn::Tensor x) override {
    nn::Tensor y = nn::conv2d_forward(x, layer_);
    cached_x_ = std::move(x);
    return y;
  }

  nn::Tensor backward(nn::Tensor grad) override {
    nn::Tensor gi = nn::conv2d_backward(grad, cached_x_, layer_, grad_w_, grad_b_);
    cached_x_ = nn::Tensor();
    return gi;
  }

  nn::Tensor infer(nn::Tensor x) const override { return nn::conv2d_forward(x, layer_); }

  void collect(const std::string& prefix, std::vector<ParamRec>& out) override {
    out.push_back({prefix + ".w", &layer_.w, &grad_w_, true});
    out.push_back({prefix + ".b", &layer_.b, &grad_b_, true});
  }

  nn::ConvLayer layer_;
  nn::Tensor grad_w_, grad_b_;
  nn::Tensor cached_x_;
};

class BnNode : public Node {
 public:
  explicit BnNode(std::size_t channels) : layer_(channels) {}

  nn::Tensor train_forward(nn::Tensor x) override {
    return nn::batchnorm_forward(x, layer_, nn::BnMode::kTrain, &cache_);
  }

  nn::Tensor backward(nn::Tensor grad) override {
    nn::Tensor gi = nn::batchnorm_backward(grad, cache_, grad_gamma_, grad_beta_);
    cache_ = nn::BnCache();
    return gi;
  }

  nn::Tensor infer(nn::Tensor x) const override {
    // Running statistics are read-only here.
    return nn::batchnorm_forward(x, const_cast<nn::BatchNormLayer&>(layer_), nn::BnMode::kInfer);
  }

  void collect(const std::string& prefix, std::vector<ParamRec>& out) override {
    out.push_back({prefix + ".gamma", &layer_.gamma, &grad_gamma_, true});
    out.push_back({prefix + ".beta", &layer_.beta, &grad_beta_, true});
    out.push_back({prefix + ".running_mean", &layer_.running_mean, nullptr, false});
    out.push_back({prefix + ".running_var", &layer_.running_var, nullptr, false});
  }

  nn::BatchNormLayer layer_;
  nn::BnCache cache_;
  nn::Tensor grad_gamma_, grad_beta_;
};

class ReluNode : public Node {
 public:
  nn::Tensor train_forward(nn::Tensor x) override {
    nn::relu_inplace(x, mask_);
    return x;
  }

  nn::Tensor backward(nn::Tensor grad) override {
    nn::Tensor g = nn::relu_backward(grad, mask_);
    mask_.clear();
    return g;
  }

  nn::Tensor infer(nn::Tensor x) const override { return nn::relu(x); }

  void collect(const std::string&, std::vector<ParamRec>&) override {}

  std::vector<std::uint8_t> mask_;
};

class PoolNode : public Node {
 public:
  PoolNode(std::size_t extent, std::size_t stride) : extent_(extent), stride_(stride) {}

  nn::Tensor train_forward(nn::Tensor x) override {
    return nn::maxpool_forward(x, cache_, extent_, stride_);
  }

  nn::Tensor backward(nn::Tensor grad) override {
    nn::Tensor g = nn::maxpool_backward(grad, cache_);
    cache_ = nn::PoolCache();
    return g;
  }

  nn::Tensor infer(nn::Tensor x) const override {
    nn::PoolCache scratch;
    return nn::maxpool_forward(x, scratch, extent_, stride_);
  }

  void collect(const std::string&, std::vector<ParamRec>&) override {}

  std::size_t extent_, stride_;
  nn::PoolCache cache_;
};

// Conv(1x1)-BN-ReLU, Conv(3x3)-BN-ReLU, Conv(1x1)-BN, identity skip,
// final ReLU. Channel count is preserved so the skip needs no projection.
class ResBlockNode : public Node {
 public:
  explicit ResBlockNode(std::size_t channels)
      : c1_(ConvSpec{1, 1, 1, 1, true, channels, channels, true, true}),
        c2_(ConvSpec{3, 3, 1, 1, true, channels, channels, true, true}),
        c3_(ConvSpec{1, 1, 1, 1, true, channels, channels, true, true}),
        b1_(channels),
        b2_(channels),
        b3_(channels) {}

  nn::Tensor train_forward(nn::Tensor x) override {
    nn::Tensor y = c1_.train_forward(std::move(x));  // keeps x alive as c1's cache
    y = b1_.train_forward(std::move(y));
    y = r1_.train_forward(std::move(y));
    y = c2_.train_forward(std::move(y));
    y = b2_.train_forward(std::move(y));
    y = r2_.train_forward(std::move(y));
    y = c3_.train_forward(std::move(y));
    y = b3_.train_forward(std::move(y));
    const nn::Tensor& skip = c1_.cached_x_;
    double* d = y.data();
    const double* s = skip.data();
    for (std::size_t i = 0; i < y.count(); ++i) d[i] += s[i];
    return rf_.train_forward(std::move(y));
  }

  nn::Tensor backward(nn::Tensor grad) override {
    nn::Tensor g = rf_.backward(std::move(grad));
    nn::Tensor skip_grad = g;  // identity branch
    g = b3_.backward(std::move(g));
    g = c3_.backward(std::move(g));
    g = r2_.backward(std::move(g));
    g = b2_.backward(std::move(g));
    g = c2_.backward(std::move(g));
    g = r1_.backward(std::move(g));
    g = b1_.backward(std::move(g));
    g = c1_.backward(std::move(g));
    double* d = g.data();
    const double* s = skip_grad.data();
    for (std::size_t i = 0; i < g.count(); ++i) d[i] += s[i];
    return g;
  }

  nn::Tensor infer(nn::Tensor x) const override {
    nn::Tensor y = c1_.infer(x);
    y = b1_.infer(std::move(y));
    y = r1_.infer(std::move(y));
    y = c2_.infer(std::move(y));
    y = b2_.infer(std::move(y));
    y = r2_.infer(std::move(y));
    y = c3_.infer(std::move(y));
    y = b3_.infer(std::move(y));
    double* d = y.data();
    const double* s = x.data();
    for (std::size_t i = 0; i < y.count(); ++i) d[i] += s[i];
    return rf_.infer(std::move(y));
  }

  void collect(const std::string& prefix, std::vector<ParamRec>& out) override {
    c1_.collect(prefix + ".conv1", out);
    b1_.collect(prefix + ".bn1", out);
    c2_.collect(prefix + ".conv2", out);
    b2_.collect(prefix + ".bn2", out);
    c3_.collect(prefix + ".conv3", out);
    b3_.collect(prefix + ".bn3", out);
  }

  ConvNode c1_, c2_, c3_;
  BnNode b1_, b2_, b3_;
  ReluNode r1_, r2_, rf_;
};

}  // namespace detail

Network::Network(const ArchitectureSpec& spec) : spec_(spec) {
  spec_.validate();
  nodes_.push_back(std::make_unique<detail::ConvNode>(spec_.stem));
  if (spec_.stem.bn) nodes_.push_back(std::make_unique<detail::BnNode>(spec_.stem.c_out));
  if (spec_.stem.relu) nodes_.push_back(std::make_unique<detail::ReluNode>());
  nodes_.push_back(std::make_unique<detail::PoolNode>(spec_.pool_extent, spec_.pool_stride));
  for (std::size_t i = 0; i < spec_.n_resblocks; ++i) {
    nodes_.push_back(std::make_unique<detail::ResBlockNode>(spec_.res_channels));
  }
  for (const ConvSpec& c : spec_.head) {
    nodes_.push_back(std::make_unique<detail::ConvNode>(c));
    if (c.bn) nodes_.push_back(std::make_unique<detail::BnNode>(c.c_out));
    if (c.relu) nodes_.push_back(std::make_unique<detail::ReluNode>());
  }
}

Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

std::vector<ParamRec> Network::params() {
  std::vector<ParamRec> out;
  std::size_t conv_i = 0, bn_i = 0, res_i = 0, head_i = 0;
  // Names follow the structural position: stem.*, resN.*, headN.*.
  for (auto& node : nodes_) {
    if (auto* res = dynamic_cast<detail::ResBlockNode*>(node.get())) {
      res->collect("res" + std::to_string(res_i++), out);
    } else if (auto* conv = dynamic_cast<detail::ConvNode*>(node.get())) {
      const std::string prefix = conv_i == 0 ? "stem.conv" : "head" + std::to_string(head_i) + ".conv";
      if (conv_i > 0) ++head_i;
      conv->collect(prefix, out);
      ++conv_i;
    } else if (auto* bn = dynamic_cast<detail::BnNode*>(node.get())) {
      const std::string prefix =
          bn_i == 0 ? "stem.bn" : "head" + std::to_string(head_i - 1) + ".bn";
      bn->collect(prefix, out);
      ++bn_i;
    }
  }
  return out;
}

void Network::init_params(std::uint64_t seed) {
  std::vector<ParamRec> recs = params();
  std::size_t index = 0;
  for (ParamRec& rec : recs) {
    const std::uint64_t tensor_seed = derive_seed(seed, index++);
    if (!rec.trainable) continue;
    nn::Tensor& t = *rec.value;
    const bool is_weight = rec.name.ends_with(".w");
    const bool is_gamma = rec.name.ends_with(".gamma");
    if (is_weight) {
      const nn::Shape s = t.shape();
      const double fan_in = static_cast<double>(s.f * s.t * s.c);
      const double fan_out = static_cast<double>(s.f * s.t * s.b);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      Rng rng(tensor_seed);
      for (std::size_t i = 0; i < t.count(); ++i) t.data()[i] = rng.uniform(-bound, bound);
    } else if (is_gamma) {
      t.fill(1.0);
    } else {
      t.fill(0.0);
    }
  }
}

nn::Tensor Network::train_forward(nn::Tensor x) {
  for (auto& node : nodes_) x = node->train_forward(std::move(x));
  return x;
}

nn::Tensor Network::backward(nn::Tensor grad_out) {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    grad_out = (*it)->backward(std::move(grad_out));
  }
  return grad_out;
}

nn::Tensor Network::infer(const nn::Tensor& x) const {
  nn::Tensor y = x;
  for (const auto& node : nodes_) y = node->infer(std::move(y));
  return y;
}

Network build_network(const ArchitectureSpec& spec) { return Network(spec); }

nn::Tensor bgs_to_tensor(const DistributedBgs& data) {
  nn::Tensor x(nn::Shape{data.sweep.n_points, data.n_traces, 1, 1});
  // Column j of the matrix is the frequency axis; the tensor stores
  // frequency fastest, so this is a transpose.
  for (std::size_t t = 0; t < data.n_traces; ++t) {
    for (std::size_t f = 0; f < data.sweep.n_points; ++f) {
      x(f, t, 0, 0) = data.at(f, t);
    }
  }
  return x;
}

std::vector<double> forward_bfs(Network& net, const DistributedBgs& data, nn::BnMode mode) {
  if (data.sweep.n_points != net.spec().input_freq) {
    throw std::invalid_argument("forward_bfs: input has " + std::to_string(data.sweep.n_points) +
                                " frequency samples, network expects " +
                                std::to_string(net.spec().input_freq) + "; resample first");
  }
  nn::Tensor x = bgs_to_tensor(data);
  nn::Tensor y = mode == nn::BnMode::kTrain ? net.train_forward(std::move(x)) : net.infer(x);
  if (y.shape().f != 1 || y.shape().t != data.n_traces) {
    throw NumericError("forward_bfs: unexpected output shape");
  }
  std::vector<double> out(data.n_traces);
  for (std::size_t t = 0; t < data.n_traces; ++t) out[t] = y(0, t, 0, 0);
  return out;
}

double TrainConfig::lr_at(std::size_t update) const {
  const double u = static_cast<double>(update);
  if (lr_rule == LrRule::kLinear) return std::max(alpha0 - decay * u, 0.0);
  return alpha0 / (1.0 + decay * u);
}

namespace {

// Batched sample assembly: (freq, traces, 1, batch) plus targets (1, traces, 1, batch).
void stack_samples(const std::vector<Batch>& samples, nn::Tensor& x, nn::Tensor& target) {
  const std::size_t bsz = samples.size();
  const std::size_t np = samples[0].data.sweep.n_points;
  const std::size_t nt = samples[0].data.n_traces;
  x = nn::Tensor(nn::Shape{np, nt, 1, bsz});
  target = nn::Tensor(nn::Shape{1, nt, 1, bsz});
  for (std::size_t b = 0; b < bsz; ++b) {
    const Batch& s = samples[b];
    double* slab = x.slab(0, b);
    for (std::size_t t = 0; t < nt; ++t) {
      for (std::size_t f = 0; f < np; ++f) slab[t * np + f] = s.data.at(f, t);
      target(0, t, 0, b) = s.target[t];
    }
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const SimRanges& ranges, const SweepRange& sweep,
                  const std::function<void(std::size_t, std::size_t, double)>& progress,
                  const ArchitectureSpec* arch_override) {
  if (!config.valid()) throw std::invalid_argument("train: invalid config");
  if (!ranges.valid()) throw std::invalid_argument("train: invalid sim ranges");

  ArchitectureSpec arch = arch_override ? *arch_override : ArchitectureSpec::default_spec();
  arch.input_freq = sweep.n_points;
  Network net(arch);
  net.init_params(derive_seed(config.seed, 0xA11CE));

  std::vector<ParamRec> recs = net.params();
  std::vector<nn::AdamState> states;
  states.reserve(recs.size());
  for (const ParamRec& rec : recs) {
    states.emplace_back(rec.trainable ? rec.value->shape() : nn::Shape{1, 1, 1, 1});
  }

  const std::uint64_t data_seed = derive_seed(config.seed, 0xDA7A);
  const std::size_t total_updates = config.epochs * config.updates_per_epoch;
  std::vector<double> loss_history;
  loss_history.reserve(total_updates);

  // Optional fixed corpus: one epoch worth of samples, order reshuffled
  // per epoch.
  std::vector<Batch> corpus;
  if (config.fixed_corpus) {
    Rng rng(derive_seed(data_seed, 0xC0));
    const std::size_t n = config.updates_per_epoch * config.batch_size;
    corpus.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      corpus.push_back(make_training_batch(config.traces_per_sample, ranges, sweep, rng));
    }
  }

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.fixed_corpus) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::mt19937_64 shuffle_rng(derive_seed(data_seed, 0x5AFF1E + epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
    }
    for (std::size_t step = 0; step < config.updates_per_epoch; ++step) {
      const std::size_t update = epoch * config.updates_per_epoch + step;

      std::vector<Batch> samples;
      samples.reserve(config.batch_size);
      if (config.fixed_corpus) {
        for (std::size_t b = 0; b < config.batch_size; ++b) {
          samples.push_back(corpus[order[step * config.batch_size + b]]);
        }
      } else {
        Rng rng(derive_seed(data_seed, update));
        for (std::size_t b = 0; b < config.batch_size; ++b) {
          samples.push_back(make_training_batch(config.traces_per_sample, ranges, sweep, rng));
        }
      }

      nn::Tensor x, target;
      stack_samples(samples, x, target);
      samples.clear();

      nn::Tensor pred = net.train_forward(std::move(x));
      nn::Tensor grad;
      const double loss = nn::mse_loss(pred, target, grad);
      if (!std::isfinite(loss)) {
        throw NumericError("train: non-finite loss at update " + std::to_string(update));
      }
      net.backward(std::move(grad));

      const double lr = config.lr_at(update);
      for (std::size_t i = 0; i < recs.size(); ++i) {
        if (!recs[i].trainable) continue;
        states[i].alpha = lr;
        nn::adam_step(*recs[i].value, *recs[i].grad, states[i], recs[i].name);
      }
      loss_history.push_back(loss);
      if (progress) progress(update + 1, total_updates, loss);
    }
  }

  TrainResult result;
  const double final_loss = loss_history.empty() ? 0.0 : loss_history.back();
  result.checkpoint =
      snapshot_checkpoint(net, make_train_metadata(arch, config, ranges, final_loss,
                                                   loss_history.size()));
  result.loss_history = std::move(loss_history);
  return result;
}

ModelCheckpoint snapshot_checkpoint(Network& net, const std::string& metadata_json) {
  ModelCheckpoint ckpt;
  ckpt.metadata_json = metadata_json;
  for (const ParamRec& rec : net.params()) {
    std::vector<double> values(rec.value->data(), rec.value->data() + rec.value->count());
    ckpt.records.emplace_back(rec.name, std::move(values));
  }
  return ckpt;
}

Network network_from_checkpoint(const ModelCheckpoint& ckpt) {
  Network net(ckpt.arch());
  std::vector<ParamRec> recs = net.params();
  if (recs.size() != ckpt.records.size()) {
    throw FormatError("checkpoint/spec mismatch: expected " + std::to_string(recs.size()) +
                      " records, file has " + std::to_string(ckpt.records.size()));
  }
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& [name, values] = ckpt.records[i];
    if (name != recs[i].name || values.size() != recs[i].value->count()) {
      throw FormatError("checkpoint/spec mismatch at record '" + name + "'");
    }
    std::copy(values.begin(), values.end(), recs[i].value->data());
  }
  return net;
}

DistributedBgs resample_frequency(const DistributedBgs& data, std::size_t n_points) {
  if (data.sweep.n_points == n_points) return data;
  DistributedBgs out;
  out.sweep = SweepRange{data.sweep.f_min, data.sweep.f_max, n_points};
  out.n_traces = data.n_traces;
  out.gains.resize(n_points * data.n_traces);
  const std::size_t m = data.sweep.n_points;
  for (std::size_t j = 0; j < data.n_traces; ++j) {
    for (std::size_t i = 0; i < n_points; ++i) {
      const double pos = out.sweep.norm_at(i) * static_cast<double>(m - 1);
      const std::size_t lo = std::min(static_cast<std::size_t>(pos), m - 2);
      const double frac = pos - static_cast<double>(lo);
      out.at(i, j) = (1.0 - frac) * data.at(lo, j) + frac * data.at(lo + 1, j);
    }
  }
  return out;
}

BfsTrace infer_distributed(const Network& net, const DistributedBgs& input) {
  DistributedBgs data = input;
  if (data.sweep.n_points != net.spec().input_freq) {
    data = resample_frequency(data, net.spec().input_freq);
  }
  normalize_columns(data);

  const std::size_t halo = net.spec().time_halo();
  const std::size_t chunk = 256;
  BfsTrace out;
  out.sweep = input.sweep;
  out.values.resize(data.n_traces);

  const std::size_t np = data.sweep.n_points;
  for (std::size_t begin = 0; begin < data.n_traces; begin += chunk) {
    const std::size_t end = std::min(begin + chunk, data.n_traces);
    const std::size_t w_begin = begin > halo ? begin - halo : 0;
    const std::size_t w_end = std::min(end + halo, data.n_traces);

    nn::Tensor x(nn::Shape{np, w_end - w_begin, 1, 1});
    for (std::size_t t = w_begin; t < w_end; ++t) {
      for (std::size_t f = 0; f < np; ++f) x(f, t - w_begin, 0, 0) = data.at(f, t);
    }
    nn::Tensor y = net.infer(x);
    for (std::size_t t = begin; t < end; ++t) out.values[t] = y(0, t - w_begin, 0, 0);
  }
  return out;
}

BfsTrace infer_distributed(const ModelCheckpoint& ckpt, const DistributedBgs& data) {
  Network net = network_from_checkpoint(ckpt);
  return infer_distributed(net, data);
}

}  // namespace bfs
