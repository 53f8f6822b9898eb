#ifndef BFS_EVAL_HPP
#define BFS_EVAL_HPP

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "bfs/bfs_trace.hpp"
#include "bfs/lcf.hpp"
#include "bfs/model.hpp"
#include "bfs/spectra.hpp"

namespace bfs {

// A named extraction strategy; pure given its configuration.
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual std::string name() const = 0;
  virtual BfsTrace extract(const DistributedBgs& data) const = 0;
};

class LcfExtractor : public Extractor {
 public:
  explicit LcfExtractor(LmConfig config = {}) : config_(config) {}
  std::string name() const override { return "lcf"; }
  BfsTrace extract(const DistributedBgs& data) const override {
    return fit_distributed(data, config_).trace;
  }

 private:
  LmConfig config_;
};

class CnnExtractor : public Extractor {
 public:
  explicit CnnExtractor(ModelCheckpoint ckpt)
      : net_(network_from_checkpoint(ckpt)) {}
  std::string name() const override { return "cnn"; }
  BfsTrace extract(const DistributedBgs& data) const override {
    return infer_distributed(net_, data);
  }

 private:
  Network net_;
};

// sqrt(mean of squared errors), population form. NaN entries in either
// vector are excluded pairwise.
double rmse(const std::vector<double>& pred, const std::vector<double>& truth);
struct RmseDetail {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};
RmseDetail rmse_counted(const std::vector<double>& pred, const std::vector<double>& truth);

// sqrt(mean of squared deviations from the sample mean), 1/N form. NaNs
// excluded.
double sd(const std::vector<double>& pred);

double mean_error(const std::vector<double>& pred, const std::vector<double>& truth);

struct GridSpec {
  std::vector<double> snr_db;
  std::vector<double> bfs;  // fractions
  std::vector<double> sw;   // fractions

  // SNR 5-19 dB step 2, BFS 10-90 % step 5, SW 10-50 % step 5.
  static GridSpec table1();
  std::size_t cells() const { return snr_db.size() * bfs.size() * sw.size(); }
};

struct CellMetrics {
  double rmse = 0.0;
  double sd = 0.0;
  double mean_error = 0.0;
  std::size_t used = 0;
  std::size_t failed = 0;
};

struct GridCell {
  double snr_db = 0.0, bfs = 0.0, sw = 0.0;
  std::vector<CellMetrics> metrics;  // one per extractor
  bool skipped = false;
  std::string error;
};

struct GridResult {
  GridSpec spec;
  std::vector<std::string> extractor_names;
  std::vector<GridCell> cells;  // snr-major, then bfs, then sw
  std::size_t n_per_cell = 0;
  std::uint64_t seed = 0;
};

// Identical per-cell data for every extractor: the cell stream is
// derived from (seed, cell index), so adding or reordering extractors
// never changes the simulated spectra.
GridResult run_grid(const std::vector<const Extractor*>& extractors, const GridSpec& grid,
                    std::size_t n_per_cell, const SweepRange& sweep, std::uint64_t seed);

struct UncertaintyTrace {
  std::vector<double> positions;
  std::vector<double> sd;      // per-position SD across repeats
  std::array<double, 3> coeff;  // fitted = coeff[0] z^2 + coeff[1] z + coeff[2]
  std::vector<double> fitted;
};

// Per-position SD over repeated extractions of one scenario plus an
// ordinary least-squares quadratic fit of SD against position.
UncertaintyTrace uncertainty_trace(const std::vector<BfsTrace>& repeats,
                                   const std::vector<double>& positions);

// Fiber length between the 10 % and 90 % crossings of a step transition,
// linearly interpolated. Plateau levels are the profile min/max; throws
// NumericError when the total change is below delta_floor.
double spatial_resolution(const std::vector<double>& profile,
                          const std::vector<double>& positions, double delta_floor = 1e-6);

struct BenchReport {
  std::string extractor;
  std::size_t n_traces = 0;
  std::size_t repeats = 0;
  double median_s = 0.0, min_s = 0.0, max_s = 0.0;
  double seconds_per_1000 = 0.0;  // median, normalized
  std::string machine;
};

// Wall-clock timing with one untimed warm-up pass; median over repeats,
// normalized per 1000 traces.
BenchReport bench(const Extractor& extractor, const DistributedBgs& data, std::size_t repeats);

}  // namespace bfs

#endif
