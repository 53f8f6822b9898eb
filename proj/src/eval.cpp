#include "bfs/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "bfs/errors.hpp"
#include "bfs/rng.hpp"
#include "bfs/threads.hpp"

namespace bfs {

RmseDetail rmse_counted(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
  RmseDetail detail;
  long double acc = 0.0L;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::isnan(pred[i]) || std::isnan(truth[i])) {
      ++detail.skipped;
      continue;
    }
    const long double d = pred[i] - truth[i];
    acc += d * d;
    ++detail.used;
  }
  detail.value = detail.used ? std::sqrt(static_cast<double>(acc / detail.used))
                             : std::numeric_limits<double>::quiet_NaN();
  return detail;
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  return rmse_counted(pred, truth).value;
}

double sd(const std::vector<double>& pred) {
  long double sum = 0.0L;
  std::size_t n = 0;
  for (double v : pred) {
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const long double mean = sum / n;
  long double acc = 0.0L;
  for (double v : pred) {
    if (std::isnan(v)) continue;
    const long double d = v - mean;
    acc += d * d;
  }
  return std::sqrt(static_cast<double>(acc / n));
}

double mean_error(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("mean_error: length mismatch");
  long double acc = 0.0L;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::isnan(pred[i]) || std::isnan(truth[i])) continue;
    acc += pred[i] - truth[i];
    ++n;
  }
  return n ? static_cast<double>(acc / n) : std::numeric_limits<double>::quiet_NaN();
}

GridSpec GridSpec::table1() {
  GridSpec g;
  for (int s = 5; s <= 19; s += 2) g.snr_db.push_back(s);
  for (int b = 10; b <= 90; b += 5) g.bfs.push_back(b / 100.0);
  for (int w = 10; w <= 50; w += 5) g.sw.push_back(w / 100.0);
  return g;
}

GridResult run_grid(const std::vector<const Extractor*>& extractors, const GridSpec& grid,
                    std::size_t n_per_cell, const SweepRange& sweep, std::uint64_t seed) {
  if (n_per_cell < 2) throw std::invalid_argument("run_grid: n_per_cell must be >= 2");
  GridResult result;
  result.spec = grid;
  result.n_per_cell = n_per_cell;
  result.seed = seed;
  for (const Extractor* e : extractors) result.extractor_names.push_back(e->name());
  result.cells.reserve(grid.cells());

  std::size_t cell_index = 0;
  for (double snr : grid.snr_db) {
    for (double bfs_v : grid.bfs) {
      for (double sw_v : grid.sw) {
        GridCell cell;
        cell.snr_db = snr;
        cell.bfs = bfs_v;
        cell.sw = sw_v;
        Rng rng(derive_seed(seed, cell_index));
        try {
          const Batch batch = make_test_set(bfs_v, sw_v, snr, n_per_cell, sweep, rng);
          for (const Extractor* e : extractors) {
            CellMetrics m;
            try {
              const BfsTrace trace = e->extract(batch.data);
              const RmseDetail detail = rmse_counted(trace.values, batch.target);
              m.rmse = detail.value;
              m.used = detail.used;
              m.failed = detail.skipped;
              m.sd = sd(trace.values);
              m.mean_error = mean_error(trace.values, batch.target);
            } catch (const std::exception& ex) {
              cell.skipped = true;
              cell.error = std::string(e->name()) + ": " + ex.what();
            }
            cell.metrics.push_back(m);
          }
        } catch (const std::exception& ex) {
          cell.skipped = true;
          cell.error = ex.what();
        }
        result.cells.push_back(std::move(cell));
        ++cell_index;
      }
    }
  }
  return result;
}

UncertaintyTrace uncertainty_trace(const std::vector<BfsTrace>& repeats,
                                   const std::vector<double>& positions) {
  if (repeats.size() < 2) throw std::invalid_argument("uncertainty_trace: need >= 2 repeats");
  const std::size_t n = repeats[0].size();
  for (const BfsTrace& r : repeats) {
    if (r.size() != n) throw std::invalid_argument("uncertainty_trace: repeat length mismatch");
  }
  if (positions.size() != n) {
    throw std::invalid_argument("uncertainty_trace: positions length mismatch");
  }
  if (n < 3) throw std::invalid_argument("uncertainty_trace: quadratic fit needs >= 3 positions");

  UncertaintyTrace out;
  out.positions = positions;
  out.sd.resize(n);
  std::vector<double> column(repeats.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < repeats.size(); ++r) column[r] = repeats[r].values[i];
    out.sd[i] = sd(column);
  }

  // OLS on a centered/scaled axis for conditioning; coefficients are
  // mapped back to the raw positions afterwards.
  double zmin = positions[0], zmax = positions[0];
  for (double z : positions) {
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
  }
  const double mid = (zmin + zmax) / 2.0;
  const double scale = zmax > zmin ? (zmax - zmin) / 2.0 : 1.0;

  long double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  long double rhs[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const long double z = (positions[i] - mid) / scale;
    const long double basis[3] = {z * z, z, 1.0L};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) m[a][b] += basis[a] * basis[b];
      rhs[a] += basis[a] * out.sd[i];
    }
  }
  // Gaussian elimination with partial pivoting.
  int idx[3] = {0, 1, 2};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::fabs(static_cast<double>(m[idx[r]][col])) >
          std::fabs(static_cast<double>(m[idx[piv]][col]))) {
        piv = r;
      }
    }
    std::swap(idx[col], idx[piv]);
    for (int r = col + 1; r < 3; ++r) {
      const long double f = m[idx[r]][col] / m[idx[col]][col];
      for (int c = col; c < 3; ++c) m[idx[r]][c] -= f * m[idx[col]][c];
      rhs[idx[r]] -= f * rhs[idx[col]];
    }
  }
  long double sol[3];
  for (int row = 2; row >= 0; --row) {
    long double s = rhs[idx[row]];
    for (int c = row + 1; c < 3; ++c) s -= m[idx[row]][c] * sol[c];
    sol[row] = s / m[idx[row]][row];
  }

  // sd ~ A u^2 + B u + C with u = (z - mid)/scale; expand to raw z.
  const long double A = sol[0], B = sol[1], C = sol[2];
  const long double a2 = A / (scale * scale);
  const long double a1 = B / scale - 2.0L * A * mid / (scale * scale);
  const long double a0 = A * mid * mid / (scale * scale) - B * mid / scale + C;
  out.coeff = {static_cast<double>(a2), static_cast<double>(a1), static_cast<double>(a0)};

  out.fitted.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = positions[i];
    out.fitted[i] = out.coeff[0] * z * z + out.coeff[1] * z + out.coeff[2];
  }
  return out;
}

double spatial_resolution(const std::vector<double>& profile,
                          const std::vector<double>& positions, double delta_floor) {
  if (profile.size() != positions.size() || profile.size() < 3) {
    throw std::invalid_argument("spatial_resolution: need matching profile/positions, >= 3");
  }
  std::vector<double> v = profile;
  std::vector<double> z = positions;

  // Normalize to a rising transition; width is direction-invariant.
  const std::size_t n = v.size();
  double head = 0.0, tail = 0.0;
  const std::size_t quarter = std::max<std::size_t>(1, n / 4);
  for (std::size_t i = 0; i < quarter; ++i) head += v[i];
  for (std::size_t i = n - quarter; i < n; ++i) tail += v[i];
  if (head > tail) {
    std::reverse(v.begin(), v.end());
    std::reverse(z.begin(), z.end());
    for (double& p : z) p = -p;
  }

  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  const double delta = hi - lo;
  if (delta < delta_floor) throw NumericError("spatial_resolution: no transition detected");

  const double t10 = lo + 0.1 * delta;
  const double t90 = lo + 0.9 * delta;

  std::size_t i90 = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (v[i] >= t90) {
      i90 = i;
      break;
    }
  }
  if (i90 == n || i90 == 0) throw NumericError("spatial_resolution: no 90 % crossing");

  std::size_t i10 = n;
  for (std::size_t i = i90; i-- > 0;) {
    if (v[i] <= t10) {
      i10 = i;
      break;
    }
  }
  if (i10 == n) throw NumericError("spatial_resolution: no 10 % crossing before the 90 % one");

  auto interp = [&](std::size_t a, std::size_t b, double level) {
    const double dv = v[b] - v[a];
    const double frac = dv != 0.0 ? (level - v[a]) / dv : 0.0;
    return z[a] + frac * (z[b] - z[a]);
  };
  const double x10 = interp(i10, i10 + 1, t10);
  const double x90 = interp(i90 - 1, i90, t90);
  return std::fabs(x90 - x10);
}

namespace {

std::string machine_descriptor() {
  std::string model = "unknown-cpu";
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const std::size_t colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + ", " + std::to_string(max_threads()) + " threads";
}

}  // namespace

BenchReport bench(const Extractor& extractor, const DistributedBgs& data, std::size_t repeats) {
  if (repeats < 3) throw std::invalid_argument("bench: repeats must be >= 3");
  BenchReport report;
  report.extractor = extractor.name();
  report.n_traces = data.n_traces;
  report.repeats = repeats;
  report.machine = machine_descriptor();

  (void)extractor.extract(data);  // warm-up, untimed

  std::vector<double> times(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    (void)extractor.extract(data);
    const auto stop = std::chrono::steady_clock::now();
    times[r] = std::chrono::duration<double>(stop - start).count();
  }
  std::sort(times.begin(), times.end());
  report.min_s = times.front();
  report.max_s = times.back();
  report.median_s = repeats % 2 ? times[repeats / 2]
                                : 0.5 * (times[repeats / 2 - 1] + times[repeats / 2]);
  report.seconds_per_1000 = report.median_s * 1000.0 / static_cast<double>(data.n_traces);
  return report;
}

}  // namespace bfs
