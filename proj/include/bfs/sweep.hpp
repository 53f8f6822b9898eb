#ifndef BFS_SWEEP_HPP
#define BFS_SWEEP_HPP

#include <cstddef>

namespace bfs {

// Frequency axis of a sweep: n_points samples spaced evenly over
// [f_min, f_max]. Anchors every normalized quantity in the library.
struct SweepRange {
  double f_min = 0.0;
  double f_max = 1.0;
  std::size_t n_points = 151;

  double span() const { return f_max - f_min; }
  double step_hz() const { return span() / static_cast<double>(n_points - 1); }
  // Grid step as a fraction of the sweep range.
  double step_norm() const { return 1.0 / static_cast<double>(n_points - 1); }
  double freq_at(std::size_t i) const { return f_min + static_cast<double>(i) * step_hz(); }
  // Normalized frequency of sample i, in [0, 1].
  double norm_at(std::size_t i) const { return static_cast<double>(i) * step_norm(); }

  bool valid() const { return f_max > f_min && n_points >= 3; }
};

// BFS_N = (BFS - f_min) / (f_max - f_min). Values outside [0,1] are
// permitted (out-of-range BFS); callers flag them.
inline double normalize_bfs(double bfs_hz, const SweepRange& sweep) {
  return (bfs_hz - sweep.f_min) / sweep.span();
}

inline double denormalize_bfs(double fraction, const SweepRange& sweep) {
  return sweep.f_min + fraction * sweep.span();
}

}  // namespace bfs

#endif
