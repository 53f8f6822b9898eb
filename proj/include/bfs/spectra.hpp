#ifndef BFS_SPECTRA_HPP
#define BFS_SPECTRA_HPP

#include <cstddef>
#include <vector>

#include "bfs/rng.hpp"
#include "bfs/sweep.hpp"

namespace bfs {

// One Lorentzian line: gain peak g_B, center v_B and FWHM sw, the latter
// two as fractions of the sweep range.
struct LorentzianParams {
  double g_b = 1.0;
  double v_b = 0.5;
  double sw = 0.25;

  bool valid() const {
    return g_b > 0.0 && v_b >= 0.0 && v_b <= 1.0 && sw > 0.0 && sw < 1.0;
  }
};

// Samples (v_i, g_i) of one spectrum over a sweep.
struct SpectrumTrace {
  SweepRange sweep;
  std::vector<double> gains;  // length sweep.n_points
};

// 2-D gain matrix, frequency x fiber position. Column j holds trace j;
// frequency index varies fastest (column-contiguous).
struct DistributedBgs {
  SweepRange sweep;
  std::size_t n_traces = 0;
  std::vector<double> gains;  // n_points * n_traces

  double& at(std::size_t point, std::size_t trace) {
    return gains[trace * sweep.n_points + point];
  }
  double at(std::size_t point, std::size_t trace) const {
    return gains[trace * sweep.n_points + point];
  }
  const double* column(std::size_t trace) const {
    return gains.data() + trace * sweep.n_points;
  }
  SpectrumTrace trace(std::size_t j) const;
};

// Uniform draw ranges for the simulated corpus. Defaults follow the
// training setup: BFS 5-95 %, SW 10-50 %, SNR 5-20 dB.
struct SimRanges {
  double bfs_lo = 0.05, bfs_hi = 0.95;
  double sw_lo = 0.10, sw_hi = 0.50;
  double snr_lo = 5.0, snr_hi = 20.0;

  bool valid() const {
    return bfs_lo < bfs_hi && sw_lo < sw_hi && snr_lo < snr_hi && bfs_lo >= 0.0 &&
           bfs_hi <= 1.0 && sw_lo >= 0.0 && sw_hi <= 1.0;
  }
};

// g_B / (1 + ((v - v_B)/(sw/2))^2). Total function of any finite v.
double lorentzian_gain(const LorentzianParams& params, double v);

// Gaussian noise sigma giving the requested peak-power SNR against a unit
// peak: 10^(-snr_db/20).
double noise_sigma_from_snr(double snr_db);

// Unit-peak Lorentzian sampled at the sweep points plus i.i.d. Gaussian
// noise, then peak-normalized to max 1. Deterministic given the rng state.
// If raw_peak is non-null it receives the pre-normalization maximum so
// callers can undo the final scaling. Throws NumericError if eight
// consecutive draws leave a non-positive maximum.
SpectrumTrace synth_trace(const LorentzianParams& params, const SweepRange& sweep,
                          double snr_db, Rng& rng, double* raw_peak = nullptr);

// Peak-normalize every column in place (max -> 1). Idempotent: a column
// whose maximum is already 1 is divided by exactly 1.0 and left bit-equal.
void normalize_columns(DistributedBgs& data);

struct Batch {
  DistributedBgs data;
  std::vector<double> target;  // normalized BFS per column
};

// Random training columns: independent uniform BFS, SW, SNR per column.
// target[i] is the BFS used for column i.
Batch make_training_batch(std::size_t n_traces, const SimRanges& ranges,
                          const SweepRange& sweep, Rng& rng);

// n noisy realizations of one fixed Lorentzian.
Batch make_test_set(double bfs, double sw, double snr_db, std::size_t n,
                    const SweepRange& sweep, Rng& rng);

// Software analog of a heated fiber end: baseline BFS, a linear ramp of
// transition_samples columns starting at heated_start, then heated BFS.
Batch make_step_scenario(double baseline_bfs, double heated_bfs, std::size_t heated_start,
                         std::size_t n_traces, double sw, double snr_db,
                         std::size_t transition_samples, const SweepRange& sweep, Rng& rng);

}  // namespace bfs

#endif
