#ifndef BFS_BGS_IO_HPP
#define BFS_BGS_IO_HPP

#include <optional>
#include <string>
#include <vector>

#include "bfs/bfs_trace.hpp"
#include "bfs/spectra.hpp"

namespace bfs {

// On-disk distributed BGS: magic "BGS1", u32 n_points, u32 n_traces,
// f64 f_min, f64 f_max, gains frequency-major, then an optional trailing
// "TRUE" block with one f64 normalized true BFS per trace. All fields
// little-endian.
struct BgsFile {
  DistributedBgs data;
  std::optional<std::vector<double>> truth;
};

void write_bgs(const std::string& path, const BgsFile& file);
BgsFile read_bgs(const std::string& path);

// CSV: header row of position indices, one column per trace, one row per
// frequency sample. The sweep is not representable in CSV; imports use
// the supplied sweep endpoints (normalized [0,1] by default).
void write_bgs_csv(const std::string& path, const DistributedBgs& data);
DistributedBgs read_bgs_csv(const std::string& path, double f_min = 0.0, double f_max = 1.0);

// Standalone BFS block: magic "TRUE", u32 count, f64 normalized values.
void write_bfs_bin(const std::string& path, const BfsTrace& trace);
std::vector<double> read_bfs_bin(const std::string& path);

}  // namespace bfs

#endif
