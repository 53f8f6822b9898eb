#ifndef BFS_LCF_HPP
#define BFS_LCF_HPP

#include <array>
#include <string>
#include <vector>

#include "bfs/bfs_trace.hpp"
#include "bfs/spectra.hpp"

namespace bfs {

// Levenberg-Marquardt controls. The stopping threshold applies to the
// Euclidean norm of the parameter update in normalized units.
struct LmConfig {
  double step_stop = 1e-8;
  std::size_t max_iter = 200;
  double lambda_init = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 10.0;

  bool valid() const {
    return step_stop > 0 && max_iter > 0 && lambda_init > 0 && lambda_up > 1 && lambda_down > 1;
  }
};

struct FitResult {
  LorentzianParams params;
  std::size_t iterations = 0;
  bool converged = false;
  double sse = 0.0;
  bool clamped = false;  // a parameter bound was hit during iteration
};

// Initial values read off the samples: the maximum gain, its frequency,
// and the width of the contiguous above-half-maximum region around the
// peak. Throws NumericError("degenerate spectrum") on a flat trace.
LorentzianParams estimate_initial(const SpectrumTrace& trace);

// residual_i = g_i - g(v_i; params); jacobian column k is the partial of
// the residual (minus the model partial) w.r.t. (g_B, v_B, sw).
void residual_jacobian(const LorentzianParams& params, const SpectrumTrace& trace,
                       std::vector<double>& residual,
                       std::vector<std::array<double, 3>>& jacobian);

FitResult lm_fit(const SpectrumTrace& trace, const LorentzianParams& init,
                 const LmConfig& config = {});

struct ColumnFit {
  FitResult fit;
  bool ok = false;
  std::string error;  // set when ok is false
};

struct DistributedFit {
  BfsTrace trace;  // NaN where a column failed
  std::vector<ColumnFit> columns;
};

// lm_fit per column with estimate_initial starting points. Column
// failures become NaN entries; the rest of the trace is unaffected.
// Columns are processed concurrently up to max_threads(); output order
// is fixed by column index.
DistributedFit fit_distributed(const DistributedBgs& data, const LmConfig& config = {});

}  // namespace bfs

#endif
