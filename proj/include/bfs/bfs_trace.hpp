#ifndef BFS_BFS_TRACE_HPP
#define BFS_BFS_TRACE_HPP

#include <cmath>
#include <vector>

#include "bfs/sweep.hpp"

namespace bfs {

// Extracted BFS per fiber position. Values are sweep-range fractions; a
// NaN marks a position where extraction failed. The sweep is carried so
// physical frequencies can be recovered at I/O boundaries.
struct BfsTrace {
  std::vector<double> values;
  SweepRange sweep;

  std::size_t size() const { return values.size(); }
  double hz_at(std::size_t i) const { return denormalize_bfs(values[i], sweep); }
  std::size_t failed_count() const {
    std::size_t n = 0;
    for (double v : values) n += std::isnan(v) ? 1 : 0;
    return n;
  }
};

}  // namespace bfs

#endif
