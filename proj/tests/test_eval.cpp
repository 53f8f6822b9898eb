#include <doctest.h>

#include <cmath>
#include <random>

#include "bfs/errors.hpp"
#include "bfs/eval.hpp"
#include "test_util.hpp"

using namespace bfs;

namespace {

// Extractor returning a fixed value everywhere; for harness arithmetic
// tests.
class ConstantExtractor : public Extractor {
 public:
  ConstantExtractor(std::string name, double value) : name_(std::move(name)), value_(value) {}
  std::string name() const override { return name_; }
  BfsTrace extract(const DistributedBgs& data) const override {
    BfsTrace t;
    t.sweep = data.sweep;
    t.values.assign(data.n_traces, value_);
    return t;
  }

 private:
  std::string name_;
  double value_;
};

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("rmse pinned values") {
  CHECK(rmse({0.3, 0.4}, {0.3, 0.4}) == 0.0);
  CHECK(rmse({0.31, 0.39}, {0.30, 0.40}) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("rmse excludes NaN pairs with a count") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const RmseDetail d = rmse_counted({0.1, nan, 0.3}, {0.1, 0.2, 0.3});
  CHECK(d.value == 0.0);
  CHECK(d.used == 2);
  CHECK(d.skipped == 1);
}

// Independent-summation oracle on a large random pair.
TEST_CASE("rmse equals a direct summation") {
  std::mt19937_64 eng(5);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> pred(1000), truth(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    pred[i] = dist(eng);
    truth[i] = dist(eng);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  const double direct = std::sqrt(acc / 1000.0);
  CHECK(std::fabs(rmse(pred, truth) - direct) <= 1e-15);
}

TEST_CASE("sd pinned values") {
  CHECK(sd({0.7, 0.7, 0.7}) == 0.0);
  CHECK(sd({0.0, 2.0}) == 1.0);  // 1/N normalization
}

TEST_CASE("rmse^2 = sd^2 + bias^2 against a constant truth") {
  std::mt19937_64 eng(9);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> pred(10000), truth(10000, 0.5);
  for (auto& p : pred) p = dist(eng);
  const double r = rmse(pred, truth);
  const double s = sd(pred);
  const double b = mean_error(pred, truth);
  CHECK(std::fabs(r * r - s * s - b * b) < 1e-12);
  CHECK(s <= r + 1e-15);
}

TEST_CASE("table1 axes") {
  const GridSpec g = GridSpec::table1();
  CHECK(g.snr_db.size() == 8);
  CHECK(g.bfs.size() == 17);
  CHECK(g.sw.size() == 9);
  CHECK(g.cells() == 1224);
  CHECK(g.snr_db.front() == 5.0);
  CHECK(g.snr_db.back() == 19.0);
  CHECK(g.bfs.front() == doctest::Approx(0.10));
  CHECK(g.bfs.back() == doctest::Approx(0.90));
  CHECK(g.sw.front() == doctest::Approx(0.10));
  CHECK(g.sw.back() == doctest::Approx(0.50));
}

TEST_CASE("run_grid single noiseless cell with the LCF") {
  GridSpec g;
  g.snr_db = {200.0};  // effectively noiseless
  g.bfs = {0.4};
  g.sw = {0.25};
  LcfExtractor lcf;
  const GridResult res = run_grid({&lcf}, g, 8, SweepRange{0, 1, 151}, 3);
  REQUIRE(res.cells.size() == 1);
  REQUIRE(res.cells[0].metrics.size() == 1);
  CHECK_FALSE(res.cells[0].skipped);
  CHECK(res.cells[0].metrics[0].rmse < 1e-6);
  CHECK(res.cells[0].metrics[0].used == 8);
}

TEST_CASE("run_grid difference sign convention and data sharing") {
  GridSpec g;
  g.snr_db = {11.0, 13.0};
  g.bfs = {0.3, 0.5};
  g.sw = {0.25};
  const ConstantExtractor good("cnn", 0.3);  // exact for bfs=0.3 cells
  const ConstantExtractor bad("lcf", 0.32);

  const GridResult ab = run_grid({&good, &bad}, g, 16, SweepRange{0, 1, 51}, 7);
  const GridResult ba = run_grid({&bad, &good}, g, 16, SweepRange{0, 1, 51}, 7);

  for (std::size_t c = 0; c < ab.cells.size(); ++c) {
    // Evaluation order cannot change the per-cell data or metrics.
    CHECK(ab.cells[c].metrics[0].rmse == ba.cells[c].metrics[1].rmse);
    CHECK(ab.cells[c].metrics[1].rmse == ba.cells[c].metrics[0].rmse);
  }
  // CNN minus LCF is negative when the CNN is better (lower RMSE).
  const GridCell& cell0 = ab.cells[0];  // snr 11, bfs 0.3
  CHECK(cell0.bfs == 0.3);
  const double diff = cell0.metrics[0].rmse - cell0.metrics[1].rmse;
  CHECK(diff < 0.0);
}

TEST_CASE("run_grid rejects tiny cells and records failures") {
  GridSpec g;
  g.snr_db = {11.0};
  g.bfs = {0.5};
  g.sw = {0.25};
  LcfExtractor lcf;
  CHECK_THROWS_AS(run_grid({&lcf}, g, 1, SweepRange{0, 1, 51}, 1), std::invalid_argument);
}

TEST_CASE("uncertainty_trace identical repeats give zero SD and zero fit") {
  BfsTrace t;
  t.sweep = SweepRange{0, 1, 11};
  t.values = {0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> pos{0, 1, 2, 3, 4};
  const UncertaintyTrace u = uncertainty_trace({t, t, t}, pos);
  for (double s : u.sd) CHECK(s == 0.0);
  for (double c : u.coeff) CHECK(std::fabs(c) < 1e-12);
}

TEST_CASE("uncertainty_trace recovers an exact quadratic") {
  // Build repeats whose per-position SD is exactly 1 + 0.1 z + 0.01 z^2:
  // two values +-d around a common mean give SD d with 1/N form.
  std::vector<double> pos(40);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<double>(i);
  BfsTrace a, b;
  a.sweep = b.sweep = SweepRange{0, 1, 11};
  for (double z : pos) {
    const double d = 1.0 + 0.1 * z + 0.01 * z * z;
    a.values.push_back(0.5 + d);
    b.values.push_back(0.5 - d);
  }
  const UncertaintyTrace u = uncertainty_trace({a, b}, pos);
  CHECK(u.coeff[0] == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(u.coeff[1] == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(u.coeff[2] == doctest::Approx(1.0).epsilon(1e-9));
  for (std::size_t i = 0; i < pos.size(); ++i) {
    CHECK(u.fitted[i] ==
          doctest::Approx(u.coeff[0] * pos[i] * pos[i] + u.coeff[1] * pos[i] + u.coeff[2])
              .epsilon(1e-12));
  }
}

// Normal-equations oracle with an independent long-double solve.
TEST_CASE("uncertainty_trace matches an independent normal-equations solve") {
  std::mt19937_64 eng(13);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> pos(60);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = 2.0 * static_cast<double>(i);

  std::vector<BfsTrace> repeats(6);
  for (auto& r : repeats) {
    r.sweep = SweepRange{0, 1, 11};
    r.values.resize(pos.size());
  }
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (auto& r : repeats) r.values[i] = dist(eng);
  }
  const UncertaintyTrace u = uncertainty_trace(repeats, pos);

  long double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  long double rhs[3] = {0, 0, 0};
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const long double z = pos[i];
    const long double basis[3] = {z * z, z, 1.0L};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) m[a][b] += basis[a] * basis[b];
      rhs[a] += basis[a] * u.sd[i];
    }
  }
  // Cramer's rule, independent of the library's elimination.
  const long double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                          m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                          m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  auto det3 = [&](int col) {
    long double mm[3][3];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) mm[r][c] = c == col ? rhs[r] : m[r][c];
    }
    return mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1]) -
           mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0]) +
           mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]);
  };
  CHECK(u.coeff[0] == doctest::Approx(static_cast<double>(det3(0) / det)).epsilon(1e-7));
  CHECK(u.coeff[1] == doctest::Approx(static_cast<double>(det3(1) / det)).epsilon(1e-7));
  CHECK(u.coeff[2] == doctest::Approx(static_cast<double>(det3(2) / det)).epsilon(1e-7));

  // Least-squares residuals are orthogonal to the basis.
  long double dot[3] = {0, 0, 0};
  long double scale[3] = {0, 0, 0};
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const long double res = u.sd[i] - u.fitted[i];
    const long double basis[3] = {pos[i] * pos[i], pos[i], 1.0L};
    for (int a = 0; a < 3; ++a) {
      dot[a] += res * basis[a];
      scale[a] += basis[a] * basis[a];
    }
  }
  for (int a = 0; a < 3; ++a) {
    CHECK(std::fabs(static_cast<double>(dot[a])) / std::sqrt(static_cast<double>(scale[a])) <
          1e-9);
  }
}

TEST_CASE("uncertainty_trace input validation") {
  BfsTrace t;
  t.sweep = SweepRange{0, 1, 11};
  t.values = {0.1, 0.2};
  CHECK_THROWS_AS(uncertainty_trace({t}, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(uncertainty_trace({t, t}, {0, 1}), std::invalid_argument);  // < 3 positions
}

TEST_CASE("spatial_resolution pinned cases") {
  std::vector<double> pos(30);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<double>(i);

  SUBCASE("one-sample jump is below one sample width") {
    std::vector<double> v(30, 0.3);
    for (std::size_t i = 15; i < 30; ++i) v[i] = 0.7;
    CHECK(spatial_resolution(v, pos) <= 1.0);
  }
  SUBCASE("10-sample linear ramp measures 8 m") {
    std::vector<double> v(30);
    for (std::size_t i = 0; i < 30; ++i) {
      if (i < 10) {
        v[i] = 0.2;
      } else if (i < 20) {
        v[i] = 0.2 + 0.4 * static_cast<double>(i - 10) / 10.0;
      } else {
        v[i] = 0.6;
      }
    }
    CHECK(spatial_resolution(v, pos) == doctest::Approx(8.0).epsilon(1e-9));
  }
  SUBCASE("flat profile throws") {
    std::vector<double> v(30, 0.5);
    CHECK_THROWS_AS(spatial_resolution(v, pos), NumericError);
  }
}

TEST_CASE("spatial_resolution shift and reversal invariance") {
  std::vector<double> pos(40);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<double>(i);
  std::vector<double> v(40);
  for (std::size_t i = 0; i < 40; ++i) {
    if (i < 12) {
      v[i] = 0.25;
    } else if (i < 26) {
      v[i] = 0.25 + 0.5 * static_cast<double>(i - 12) / 14.0;
    } else {
      v[i] = 0.75;
    }
  }
  const double base = spatial_resolution(v, pos);

  std::vector<double> shifted = v;
  for (double& x : shifted) x += 3.1;
  CHECK(spatial_resolution(shifted, pos) == doctest::Approx(base).epsilon(1e-12));

  std::vector<double> reversed(v.rbegin(), v.rend());
  CHECK(spatial_resolution(reversed, pos) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("bench reports ordered statistics") {
  Rng rng(3);
  const Batch b = make_test_set(0.4, 0.25, 15.0, 64, SweepRange{0, 1, 151}, rng);
  LcfExtractor lcf;
  const BenchReport rep = bench(lcf, b.data, 3);
  CHECK(rep.min_s <= rep.median_s);
  CHECK(rep.median_s <= rep.max_s);
  CHECK(rep.n_traces == 64);
  CHECK(rep.seconds_per_1000 > 0.0);
  CHECK_FALSE(rep.machine.empty());
}

TEST_CASE("bench scales roughly linearly in the trace count") {
  Rng rng(5);
  const Batch big = make_test_set(0.4, 0.25, 11.0, 1200, SweepRange{0, 1, 151}, rng);
  DistributedBgs half = big.data;
  half.n_traces = 600;
  half.gains.resize(151 * 600);

  LcfExtractor lcf;
  const BenchReport r_half = bench(lcf, half, 5);
  const BenchReport r_full = bench(lcf, big.data, 5);
  const double ratio = r_full.median_s / r_half.median_s;
  CHECK(ratio > 1.0);
  CHECK(ratio < 4.0);
}

TEST_SUITE_END();
