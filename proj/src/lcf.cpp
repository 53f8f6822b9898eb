#include "bfs/lcf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bfs/errors.hpp"
#include "bfs/threads.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bfs {

LorentzianParams estimate_initial(const SpectrumTrace& trace) {
  const std::size_t m = trace.gains.size();
  if (m == 0) throw std::invalid_argument("estimate_initial: empty trace");

  std::size_t peak = 0;
  for (std::size_t i = 1; i < m; ++i) {
    if (trace.gains[i] > trace.gains[peak]) peak = i;
  }
  const double g_max = trace.gains[peak];
  const double g_min = *std::min_element(trace.gains.begin(), trace.gains.end());
  if (g_max == g_min) throw NumericError("degenerate spectrum: all samples equal");

  // Contiguous run around the peak where the gain exceeds half maximum.
  const double half = g_max / 2.0;
  std::size_t lo = peak;
  while (lo > 0 && trace.gains[lo - 1] > half) --lo;
  std::size_t hi = peak;
  while (hi + 1 < m && trace.gains[hi + 1] > half) ++hi;
  const std::size_t count = hi - lo + 1;

  LorentzianParams p;
  p.g_b = g_max;
  p.v_b = trace.sweep.norm_at(peak);
  p.sw = static_cast<double>(count) * trace.sweep.step_norm();
  return p;
}

void residual_jacobian(const LorentzianParams& params, const SpectrumTrace& trace,
                       std::vector<double>& residual,
                       std::vector<std::array<double, 3>>& jacobian) {
  if (!(params.sw > 0.0)) throw NumericError("residual_jacobian: sw must be positive");
  const std::size_t m = trace.gains.size();
  residual.resize(m);
  jacobian.resize(m);
  const double half_w = params.sw / 2.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double v = trace.sweep.norm_at(i);
    const double u = (v - params.v_b) / half_w;
    const double den = 1.0 + u * u;
    const double g = params.g_b / den;
    residual[i] = trace.gains[i] - g;
    // d g / d g_B = 1/den; d g / d v_B = 4 g_B u / (sw den^2);
    // d g / d sw  = 2 g_B u^2 / (sw den^2). Residual partials are negated.
    const double common = 2.0 * params.g_b * u / (params.sw * den * den);
    jacobian[i][0] = -1.0 / den;
    jacobian[i][1] = -2.0 * common;
    jacobian[i][2] = -common * u;
  }
}

namespace {

double sse_at(const LorentzianParams& params, const SpectrumTrace& trace) {
  double s = 0.0;
  const double half_w = params.sw / 2.0;
  for (std::size_t i = 0; i < trace.gains.size(); ++i) {
    const double u = (trace.sweep.norm_at(i) - params.v_b) / half_w;
    const double r = trace.gains[i] - params.g_b / (1.0 + u * u);
    s += r * r;
  }
  return s;
}

// Solve a symmetric 3x3 system by Gaussian elimination with partial
// pivoting. Returns false when singular to working precision.
bool solve3(double a[3][3], double b[3], double x[3]) {
  int idx[3] = {0, 1, 2};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::fabs(a[idx[r]][col]) > std::fabs(a[idx[piv]][col])) piv = r;
    }
    std::swap(idx[col], idx[piv]);
    const double d = a[idx[col]][col];
    if (!(std::fabs(d) > 1e-300)) return false;
    for (int r = col + 1; r < 3; ++r) {
      const double f = a[idx[r]][col] / d;
      for (int c = col; c < 3; ++c) a[idx[r]][c] -= f * a[idx[col]][c];
      b[idx[r]] -= f * b[idx[col]];
    }
  }
  for (int row = 2; row >= 0; --row) {
    double s = b[idx[row]];
    for (int c = row + 1; c < 3; ++c) s -= a[idx[row]][c] * x[c];
    x[row] = s / a[idx[row]][row];
  }
  return std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2]);
}

bool clamp_params(LorentzianParams& p) {
  bool clamped = false;
  if (p.v_b < -0.5) { p.v_b = -0.5; clamped = true; }
  if (p.v_b > 1.5) { p.v_b = 1.5; clamped = true; }
  if (p.sw < 1e-4) { p.sw = 1e-4; clamped = true; }
  if (p.sw > 2.0) { p.sw = 2.0; clamped = true; }
  return clamped;
}

}  // namespace

FitResult lm_fit(const SpectrumTrace& trace, const LorentzianParams& init,
                 const LmConfig& config) {
  if (!config.valid()) throw std::invalid_argument("lm_fit: invalid config");
  if (trace.gains.size() < 4) throw std::invalid_argument("lm_fit: need at least 4 samples");

  FitResult result;
  result.params = init;
  result.clamped = clamp_params(result.params);
  result.sse = sse_at(result.params, trace);
  if (!std::isfinite(result.sse)) throw NumericError("lm_fit: non-finite SSE at initial point");

  double lambda = config.lambda_init;
  std::vector<double> residual;
  std::vector<std::array<double, 3>> jacobian;
  bool fresh_jacobian = false;  // valid at result.params

  for (std::size_t iter = 1; iter <= config.max_iter; ++iter) {
    result.iterations = iter;
    if (!fresh_jacobian) {
      residual_jacobian(result.params, trace, residual, jacobian);
      fresh_jacobian = true;
    }

    // Normal equations with Marquardt scaling:
    // (J^T J + lambda diag(J^T J)) delta = -J^T r.
    double jtj[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    double jtr[3] = {0, 0, 0};
    for (std::size_t i = 0; i < residual.size(); ++i) {
      const auto& row = jacobian[i];
      for (int a = 0; a < 3; ++a) {
        for (int b = a; b < 3; ++b) jtj[a][b] += row[a] * row[b];
        jtr[a] += row[a] * residual[i];
      }
    }
    jtj[1][0] = jtj[0][1];
    jtj[2][0] = jtj[0][2];
    jtj[2][1] = jtj[1][2];

    double damped[3][3];
    double rhs[3];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) damped[a][b] = jtj[a][b];
      damped[a][a] += lambda * jtj[a][a];
      rhs[a] = -jtr[a];
    }

    double delta[3];
    if (!solve3(damped, rhs, delta)) {
      lambda *= config.lambda_up;
      if (!std::isfinite(lambda)) throw NumericError("lm_fit: damping overflow");
      continue;
    }

    const double step_norm =
        std::sqrt(delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]);

    LorentzianParams cand = result.params;
    cand.g_b += delta[0];
    cand.v_b += delta[1];
    cand.sw += delta[2];
    const bool cand_clamped = clamp_params(cand);
    const double cand_sse = cand.sw > 0.0 ? sse_at(cand, trace)
                                          : std::numeric_limits<double>::infinity();
    if (!std::isfinite(cand_sse) && std::isfinite(step_norm)) {
      lambda *= config.lambda_up;
      if (!std::isfinite(lambda)) throw NumericError("lm_fit: damping overflow");
      continue;
    }
    if (!std::isfinite(step_norm)) throw NumericError("lm_fit: non-finite step");

    if (cand_sse < result.sse) {
      result.params = cand;
      result.sse = cand_sse;
      result.clamped = result.clamped || cand_clamped;
      lambda /= config.lambda_down;
      fresh_jacobian = false;
      if (step_norm < config.step_stop) {
        result.converged = true;
        return result;
      }
    } else {
      // A negligible proposed step at a local minimum counts as converged
      // even though it is not an improvement.
      if (step_norm < config.step_stop) {
        result.converged = true;
        return result;
      }
      lambda *= config.lambda_up;
      if (!std::isfinite(lambda)) throw NumericError("lm_fit: damping overflow");
    }
  }
  return result;  // converged stays false; best params retained
}

DistributedFit fit_distributed(const DistributedBgs& data, const LmConfig& config) {
  DistributedFit out;
  out.trace.sweep = data.sweep;
  out.trace.values.assign(data.n_traces, std::numeric_limits<double>::quiet_NaN());
  out.columns.resize(data.n_traces);

  const std::int64_t n = static_cast<std::int64_t>(data.n_traces);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
#endif
  for (std::int64_t j = 0; j < n; ++j) {
    ColumnFit& col = out.columns[static_cast<std::size_t>(j)];
    try {
      const SpectrumTrace t = data.trace(static_cast<std::size_t>(j));
      const LorentzianParams init = estimate_initial(t);
      col.fit = lm_fit(t, init, config);
      col.ok = true;
      out.trace.values[static_cast<std::size_t>(j)] = col.fit.params.v_b;
    } catch (const std::exception& e) {
      col.ok = false;
      col.error = e.what();
    }
  }
  return out;
}

}  // namespace bfs
