#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "bfs/errors.hpp"
#include "bfs/adam.hpp"
#include "bfs/gradcheck.hpp"
#include "bfs/model.hpp"
#include "bfs/nn_ops.hpp"
#include "test_util.hpp"

using namespace bfs;
using bfs_test::random_tensor;
using bfs_test::tiny_spec;
namespace fs = std::filesystem;

namespace {

DistributedBgs random_bgs(std::size_t n_points, std::size_t n_traces, std::uint64_t seed) {
  Rng rng(seed);
  SimRanges ranges;
  return make_training_batch(n_traces, ranges, SweepRange{0, 1, n_points}, rng).data;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("default architecture frequency map reaches 1") {
  const ArchitectureSpec spec = ArchitectureSpec::default_spec();
  spec.validate();
  CHECK(spec.out_freq() == 1);
  CHECK(spec.time_halo() == 7);
}

TEST_CASE("default network maps 151 x N to 1 x N") {
  Network net(ArchitectureSpec::default_spec());
  net.init_params(1);
  for (std::size_t n : {1u, 7u, 224u}) {
    const DistributedBgs data = random_bgs(151, n, 10 + n);
    const std::vector<double> out = forward_bfs(net, data, nn::BnMode::kInfer);
    CHECK(out.size() == n);
  }
}

TEST_CASE("wrong frequency extent is rejected") {
  Network net(ArchitectureSpec::default_spec());
  net.init_params(1);
  const DistributedBgs data = random_bgs(100, 4, 3);
  CHECK_THROWS_AS(forward_bfs(net, data, nn::BnMode::kInfer), std::invalid_argument);
}

TEST_CASE("time extent preserved for every N on the reduced spec") {
  Network net(tiny_spec());
  net.init_params(2);
  for (std::size_t n : {1u, 2u, 3u, 5u, 17u, 40u}) {
    const DistributedBgs data = random_bgs(13, n, 20 + n);
    CHECK(forward_bfs(net, data, nn::BnMode::kInfer).size() == n);
  }
}

TEST_CASE("fixed-seed init and forward are bit-identical") {
  const DistributedBgs data = random_bgs(13, 6, 77);
  Network a(tiny_spec());
  a.init_params(99);
  Network b(tiny_spec());
  b.init_params(99);
  const std::vector<double> ya = forward_bfs(a, data, nn::BnMode::kInfer);
  const std::vector<double> yb = forward_bfs(b, data, nn::BnMode::kInfer);
  CHECK(ya == yb);
}

TEST_CASE("parameter count matches a per-layer hand count") {
  Network net(ArchitectureSpec::default_spec());
  std::size_t trainable = 0, state = 0;
  for (const ParamRec& rec : net.params()) {
    (rec.trainable ? trainable : state) += rec.value->count();
  }
  // stem: 3*3*1*64 + 64 and BN 2*64
  const std::size_t stem = 576 + 64 + 128;
  // per block: 1x1 and 3x3 and 1x1 convs at 64 channels with biases, 3 BN pairs
  const std::size_t block = (4096 + 64) + (36864 + 64) + (4096 + 64) + 3 * 128;
  // head: 3x1, then three 7x1, then two 3x1 at 64 channels (BN), final 3x1 64->1
  const std::size_t head = (12288 + 64 + 128) + 3 * (28672 + 64 + 128) + 2 * (12288 + 64 + 128) +
                           (192 + 1);
  CHECK(trainable == stem + 6 * block + head);
  // Running statistics: one mean/var pair per BN.
  CHECK(state == 128 + 6 * 3 * 128 + 6 * 128);
}

TEST_CASE("resblock with zero weights reduces to identity under ReLU") {
  // A one-block network with zeroed residual parameters must match the
  // equivalent zero-block network bit for bit.
  ArchitectureSpec with_block = tiny_spec();
  with_block.n_resblocks = 1;
  ArchitectureSpec without_block = tiny_spec();
  without_block.n_resblocks = 0;

  Network a(with_block);
  a.init_params(5);
  Network b(without_block);
  b.init_params(6);

  // Copy the shared layers from b into a; zero the block's convolutions
  // and leave its BN at the identity defaults (gamma 1, beta 0, running
  // stats 0/1).
  auto a_params = a.params();
  auto b_params = b.params();
  for (ParamRec& ar : a_params) {
    if (ar.name.rfind("res0.", 0) == 0) {
      if (ar.name.ends_with(".w") || ar.name.ends_with(".b") || ar.name.ends_with(".beta")) {
        ar.value->fill(0.0);
      } else if (ar.name.ends_with(".gamma")) {
        ar.value->fill(1.0);
      } else if (ar.name.ends_with(".running_mean")) {
        ar.value->fill(0.0);
      } else if (ar.name.ends_with(".running_var")) {
        ar.value->fill(1.0);
      }
      continue;
    }
    for (ParamRec& br : b_params) {
      if (br.name == ar.name) {
        *ar.value = *br.value;
        break;
      }
    }
  }

  const DistributedBgs data = random_bgs(13, 9, 31);
  const std::vector<double> ya = forward_bfs(a, data, nn::BnMode::kInfer);
  const std::vector<double> yb = forward_bfs(b, data, nn::BnMode::kInfer);
  REQUIRE(ya.size() == yb.size());
  for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == yb[i]);
}

TEST_CASE("interior translation equivariance under time-axis duplication") {
  Network net(tiny_spec());
  net.init_params(8);
  const std::size_t T = 12;
  const DistributedBgs data = random_bgs(13, T, 41);

  DistributedBgs doubled = data;
  doubled.n_traces = 2 * T;
  doubled.gains.resize(13 * 2 * T);
  for (std::size_t j = 0; j < T; ++j) {
    for (std::size_t i = 0; i < 13; ++i) {
      doubled.at(i, j) = data.at(i, j);
      doubled.at(i, j + T) = data.at(i, j);
    }
  }
  const std::vector<double> y = forward_bfs(net, doubled, nn::BnMode::kInfer);
  const std::size_t halo = net.spec().time_halo();
  REQUIRE(halo < T);
  for (std::size_t t = halo; t + halo < T; ++t) {
    CHECK(y[t] == y[t + T]);  // identical receptive fields, identical arithmetic
  }
}

TEST_CASE("training reduces loss on the reduced architecture") {
  TrainConfig config;
  config.epochs = 2;
  config.updates_per_epoch = 50;
  config.batch_size = 4;
  config.traces_per_sample = 32;
  config.seed = 7;
  const ArchitectureSpec arch = tiny_spec();
  const TrainResult run = train(config, SimRanges{}, SweepRange{0, 1, 13}, nullptr, &arch);
  REQUIRE(run.loss_history.size() == 100);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    first += run.loss_history[i];
    last += run.loss_history[50 + i];
  }
  CHECK(last / 50.0 < first / 50.0);
}

TEST_CASE("alpha0 = 0 freezes the trainable parameters") {
  TrainConfig frozen;
  frozen.epochs = 3;
  frozen.updates_per_epoch = 1;
  frozen.batch_size = 4;
  frozen.traces_per_sample = 8;
  frozen.alpha0 = 0.0;
  frozen.fixed_corpus = true;
  frozen.seed = 11;

  TrainConfig untouched = frozen;
  untouched.epochs = 0;

  const ArchitectureSpec arch = tiny_spec();
  const SweepRange sweep{0, 1, 13};
  const TrainResult ran = train(frozen, SimRanges{}, sweep, nullptr, &arch);
  const TrainResult init_only = train(untouched, SimRanges{}, sweep, nullptr, &arch);

  REQUIRE(ran.loss_history.size() == 3);
  for (double l : ran.loss_history) {
    CHECK(l == doctest::Approx(ran.loss_history[0]).epsilon(1e-12));
  }
  // Trainable records must be bit-identical to the initialized network;
  // only BN running statistics may move.
  REQUIRE(ran.checkpoint.records.size() == init_only.checkpoint.records.size());
  for (std::size_t i = 0; i < ran.checkpoint.records.size(); ++i) {
    const auto& [name, values] = ran.checkpoint.records[i];
    CHECK(name == init_only.checkpoint.records[i].first);
    if (name.find("running_") != std::string::npos) continue;
    CHECK(values == init_only.checkpoint.records[i].second);
  }
}

TEST_CASE("training is deterministic given the seed") {
  TrainConfig config;
  config.epochs = 1;
  config.updates_per_epoch = 6;
  config.batch_size = 2;
  config.traces_per_sample = 8;
  config.seed = 21;
  const ArchitectureSpec arch = tiny_spec();
  const TrainResult a = train(config, SimRanges{}, SweepRange{0, 1, 13}, nullptr, &arch);
  const TrainResult b = train(config, SimRanges{}, SweepRange{0, 1, 13}, nullptr, &arch);
  CHECK(a.loss_history == b.loss_history);
  REQUIRE(a.checkpoint.records.size() == b.checkpoint.records.size());
  for (std::size_t i = 0; i < a.checkpoint.records.size(); ++i) {
    CHECK(a.checkpoint.records[i].second == b.checkpoint.records[i].second);
  }
}

TEST_CASE("one small step descends on its own batch") {
  // alpha = 1e-5 must not increase the replayed batch loss for at least
  // 18 of 20 seeds.
  const ArchitectureSpec arch = tiny_spec();
  int descended = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Network net(arch);
    net.init_params(seed);
    Rng rng(seed * 101);
    const Batch batch = make_training_batch(16, SimRanges{}, SweepRange{0, 1, 13}, rng);
    nn::Tensor x = bgs_to_tensor(batch.data);
    nn::Tensor target(nn::Shape{1, batch.data.n_traces, 1, 1});
    for (std::size_t t = 0; t < batch.target.size(); ++t) target(0, t, 0, 0) = batch.target[t];

    nn::Tensor grad;
    nn::Tensor pred = net.train_forward(x);
    const double before = nn::mse_loss(pred, target, grad);
    net.backward(std::move(grad));

    for (ParamRec& rec : net.params()) {
      if (!rec.trainable) continue;
      nn::AdamState state(rec.value->shape(), 1e-5);
      nn::adam_step(*rec.value, *rec.grad, state, rec.name);
    }
    nn::Tensor pred2 = net.train_forward(x);
    nn::Tensor grad2;
    const double after = nn::mse_loss(pred2, target, grad2);
    if (after <= before) ++descended;
  }
  CHECK(descended >= 18);
}

TEST_CASE("end-to-end parameter gradients match finite differences") {
  const ArchitectureSpec arch = tiny_spec();
  Network net(arch);
  net.init_params(3);
  Rng rng(33);
  const Batch batch = make_training_batch(4, SimRanges{}, SweepRange{0, 1, 13}, rng);
  nn::Tensor x = bgs_to_tensor(batch.data);
  nn::Tensor target(nn::Shape{1, 4, 1, 1});
  for (std::size_t t = 0; t < 4; ++t) target(0, t, 0, 0) = batch.target[t];

  nn::Tensor grad;
  nn::Tensor pred = net.train_forward(x);
  nn::mse_loss(pred, target, grad);
  net.backward(std::move(grad));

  auto loss_with = [&](ParamRec& rec, double delta, std::size_t idx) {
    const double saved = rec.value->data()[idx];
    rec.value->data()[idx] = saved + delta;
    nn::Tensor p = net.train_forward(x);
    nn::Tensor g;
    const double value = nn::mse_loss(p, target, g);
    rec.value->data()[idx] = saved;
    return value;
  };

  auto params = net.params();
  std::mt19937_64 pick(7);
  double worst = 0.0;
  int checked = 0;
  while (checked < 20) {
    ParamRec& rec = params[pick() % params.size()];
    if (!rec.trainable) continue;
    const std::size_t idx = pick() % rec.value->count();
    const double h = 1e-6;
    const double fd = (loss_with(rec, h, idx) - loss_with(rec, -h, idx)) / (2 * h);
    const double analytic = rec.grad->data()[idx];
    const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-6});
    worst = std::max(worst, std::fabs(fd - analytic) / denom);
    ++checked;
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  const fs::path dir = fs::temp_directory_path() / ("bfs_ckpt_" + std::to_string(::getpid()));
  fs::create_directories(dir);

  Network net(tiny_spec());
  net.init_params(13);
  const std::string meta =
      make_train_metadata(tiny_spec(), TrainConfig{}, SimRanges{}, 0.0, 0);
  const ModelCheckpoint ckpt = snapshot_checkpoint(net, meta);

  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(p1, ckpt);
  const ModelCheckpoint loaded = load_checkpoint(p1);
  save_checkpoint(p2, loaded);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());

  SUBCASE("truncation is a format error") {
    fs::resize_file(p1, fs::file_size(p1) - 16);
    CHECK_THROWS_AS(load_checkpoint(p1), FormatError);
  }
  SUBCASE("payload corruption fails the checksum") {
    std::fstream f(p1, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    f.put('\x5a');
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(p1), doctest::Contains("checksum"), FormatError);
  }
  SUBCASE("unknown version is rejected") {
    std::fstream f(p1, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t bad = 9;
    f.write(reinterpret_cast<const char*>(&bad), 4);
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(p1), doctest::Contains("version"), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("infer_distributed equals one whole-batch pass and is pure") {
  Network net(tiny_spec());
  net.init_params(17);
  // 600 positions forces several chunks.
  const DistributedBgs data = random_bgs(13, 600, 51);
  const BfsTrace chunked = infer_distributed(net, data);
  const std::vector<double> whole = forward_bfs(net, data, nn::BnMode::kInfer);
  REQUIRE(chunked.size() == whole.size());
  for (std::size_t i = 0; i < whole.size(); ++i) CHECK(chunked.values[i] == whole[i]);

  const BfsTrace again = infer_distributed(net, data);
  CHECK(again.values == chunked.values);
}

TEST_CASE("infer_distributed resamples other frequency grids") {
  Network net(tiny_spec());
  net.init_params(19);
  const DistributedBgs data = random_bgs(29, 10, 53);
  const BfsTrace out = infer_distributed(net, data);
  CHECK(out.size() == 10);
  for (double v : out.values) CHECK(std::isfinite(v));
}

TEST_CASE("normalizing an already-normalized input changes nothing") {
  Network net(tiny_spec());
  net.init_params(23);
  DistributedBgs data = random_bgs(13, 8, 57);
  DistributedBgs twice = data;
  normalize_columns(twice);  // generator output is already peak-normalized
  CHECK(twice.gains == data.gains);
  CHECK(forward_bfs(net, twice, nn::BnMode::kInfer) ==
        forward_bfs(net, data, nn::BnMode::kInfer));
}

TEST_SUITE_END();
