#include "bfs/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bfs/errors.hpp"

namespace bfs {

SpectrumTrace DistributedBgs::trace(std::size_t j) const {
  SpectrumTrace t;
  t.sweep = sweep;
  t.gains.assign(column(j), column(j) + sweep.n_points);
  return t;
}

double lorentzian_gain(const LorentzianParams& params, double v) {
  const double u = (v - params.v_b) / (params.sw / 2.0);
  return params.g_b / (1.0 + u * u);
}

double noise_sigma_from_snr(double snr_db) {
  return std::pow(10.0, -snr_db / 20.0);
}

namespace {

void sample_ideal(const LorentzianParams& params, const SweepRange& sweep,
                  std::vector<double>& out) {
  LorentzianParams unit = params;
  unit.g_b = 1.0;
  out.resize(sweep.n_points);
  for (std::size_t i = 0; i < sweep.n_points; ++i) {
    out[i] = lorentzian_gain(unit, sweep.norm_at(i));
  }
}

}  // namespace

SpectrumTrace synth_trace(const LorentzianParams& params, const SweepRange& sweep,
                          double snr_db, Rng& rng, double* raw_peak) {
  if (!sweep.valid()) throw std::invalid_argument("synth_trace: invalid sweep");
  if (!(params.g_b > 0.0) || !(params.sw > 0.0)) {
    throw std::invalid_argument("synth_trace: invalid Lorentzian parameters");
  }
  std::vector<double> ideal;
  sample_ideal(params, sweep, ideal);

  const double sigma = std::isinf(snr_db) ? 0.0 : noise_sigma_from_snr(snr_db);
  SpectrumTrace trace;
  trace.sweep = sweep;
  trace.gains.resize(sweep.n_points);

  // Normalizing by a non-positive maximum is undefined; retry with the
  // next draws, then give up.
  for (int attempt = 0; attempt < 8; ++attempt) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sweep.n_points; ++i) {
      const double g = ideal[i] + (sigma > 0.0 ? rng.gaussian(sigma) : 0.0);
      trace.gains[i] = g;
      peak = std::max(peak, g);
    }
    if (peak > 0.0) {
      for (double& g : trace.gains) g /= peak;
      if (raw_peak) *raw_peak = peak;
      return trace;
    }
  }
  throw NumericError("synth_trace: non-positive maximum after 8 draws (SNR too low)");
}

void normalize_columns(DistributedBgs& data) {
  const std::size_t m = data.sweep.n_points;
  for (std::size_t j = 0; j < data.n_traces; ++j) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) peak = std::max(peak, data.at(i, j));
    if (!(peak > 0.0)) {
      throw NumericError("normalize_columns: non-positive maximum in trace " + std::to_string(j));
    }
    for (std::size_t i = 0; i < m; ++i) data.at(i, j) /= peak;
  }
}

namespace {

Batch empty_batch(std::size_t n_traces, const SweepRange& sweep) {
  Batch b;
  b.data.sweep = sweep;
  b.data.n_traces = n_traces;
  b.data.gains.resize(sweep.n_points * n_traces);
  b.target.resize(n_traces);
  return b;
}

void fill_column(Batch& batch, std::size_t j, const LorentzianParams& params, double snr_db,
                 Rng& rng) {
  const SpectrumTrace t = synth_trace(params, batch.data.sweep, snr_db, rng);
  std::copy(t.gains.begin(), t.gains.end(),
            batch.data.gains.begin() + static_cast<std::ptrdiff_t>(j * batch.data.sweep.n_points));
  batch.target[j] = params.v_b;
}

}  // namespace

Batch make_training_batch(std::size_t n_traces, const SimRanges& ranges,
                          const SweepRange& sweep, Rng& rng) {
  if (n_traces < 1) throw std::invalid_argument("make_training_batch: n_traces < 1");
  Batch batch = empty_batch(n_traces, sweep);
  for (std::size_t j = 0; j < n_traces; ++j) {
    LorentzianParams p;
    p.g_b = 1.0;
    p.v_b = rng.uniform(ranges.bfs_lo, ranges.bfs_hi);
    p.sw = rng.uniform(ranges.sw_lo, ranges.sw_hi);
    const double snr = rng.uniform(ranges.snr_lo, ranges.snr_hi);
    // Independent per-column stream so columns could be generated
    // concurrently without changing the output.
    Rng column_rng = rng.spawn();
    fill_column(batch, j, p, snr, column_rng);
  }
  return batch;
}

Batch make_test_set(double bfs, double sw, double snr_db, std::size_t n,
                    const SweepRange& sweep, Rng& rng) {
  if (n < 1) throw std::invalid_argument("make_test_set: n < 1");
  Batch batch = empty_batch(n, sweep);
  LorentzianParams p;
  p.g_b = 1.0;
  p.v_b = bfs;
  p.sw = sw;
  for (std::size_t j = 0; j < n; ++j) {
    Rng column_rng = rng.spawn();
    fill_column(batch, j, p, snr_db, column_rng);
  }
  return batch;
}

Batch make_step_scenario(double baseline_bfs, double heated_bfs, std::size_t heated_start,
                         std::size_t n_traces, double sw, double snr_db,
                         std::size_t transition_samples, const SweepRange& sweep, Rng& rng) {
  if (heated_start >= n_traces) {
    throw std::invalid_argument("make_step_scenario: heated_start past trace end");
  }
  if (heated_start + transition_samples > n_traces) {
    throw std::invalid_argument("make_step_scenario: ramp extends past trace end");
  }
  Batch batch = empty_batch(n_traces, sweep);
  for (std::size_t j = 0; j < n_traces; ++j) {
    double v;
    if (j < heated_start) {
      v = baseline_bfs;
    } else if (j < heated_start + transition_samples) {
      const double frac =
          static_cast<double>(j - heated_start) / static_cast<double>(transition_samples);
      v = baseline_bfs + frac * (heated_bfs - baseline_bfs);
    } else {
      v = heated_bfs;
    }
    LorentzianParams p;
    p.g_b = 1.0;
    p.v_b = v;
    p.sw = sw;
    Rng column_rng = rng.spawn();
    fill_column(batch, j, p, snr_db, column_rng);
  }
  return batch;
}

}  // namespace bfs
