#include "bfs/bgs_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bfs/errors.hpp"

namespace bfs {

namespace {

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& out, std::uint32_t v) { put_bytes(out, &v, 4); }
void put_f64(std::ostream& out, double v) { put_bytes(out, &v, 8); }

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(std::string("truncated file while reading ") + what, offset_);
    }
    offset_ += static_cast<long long>(n);
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v = 0;
    bytes(&v, 4, what);
    return v;
  }

  double f64(const char* what) {
    double v = 0;
    bytes(&v, 8, what);
    return v;
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

  long long offset() const { return offset_; }

 private:
  std::istream& in_;
  long long offset_ = 0;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open for reading: " + path);
  return in;
}

}  // namespace

void write_bgs(const std::string& path, const BgsFile& file) {
  std::ofstream out = open_out(path);
  const DistributedBgs& d = file.data;
  put_bytes(out, "BGS1", 4);
  put_u32(out, static_cast<std::uint32_t>(d.sweep.n_points));
  put_u32(out, static_cast<std::uint32_t>(d.n_traces));
  put_f64(out, d.sweep.f_min);
  put_f64(out, d.sweep.f_max);
  put_bytes(out, d.gains.data(), d.gains.size() * 8);
  if (file.truth) {
    if (file.truth->size() != d.n_traces) {
      throw std::invalid_argument("write_bgs: truth length != n_traces");
    }
    put_bytes(out, "TRUE", 4);
    put_bytes(out, file.truth->data(), file.truth->size() * 8);
  }
  if (!out) throw FormatError("write failed: " + path);
}

BgsFile read_bgs(const std::string& path) {
  std::ifstream in = open_in(path);
  Reader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "BGS1", 4) != 0) throw FormatError("bad magic, expected BGS1", 0);

  BgsFile file;
  DistributedBgs& d = file.data;
  d.sweep.n_points = r.u32("n_points");
  d.n_traces = r.u32("n_traces");
  d.sweep.f_min = r.f64("f_min");
  d.sweep.f_max = r.f64("f_max");
  if (!d.sweep.valid() || d.n_traces == 0) {
    throw FormatError("invalid header (need f_max > f_min, n_points >= 3, n_traces >= 1)",
                      r.offset());
  }
  d.gains.resize(d.sweep.n_points * d.n_traces);
  r.bytes(d.gains.data(), d.gains.size() * 8, "gain matrix");

  if (!r.at_eof()) {
    char tmagic[4];
    r.bytes(tmagic, 4, "truth magic");
    if (std::memcmp(tmagic, "TRUE", 4) != 0) {
      throw FormatError("bad trailing block magic, expected TRUE", r.offset() - 4);
    }
    std::vector<double> truth(d.n_traces);
    r.bytes(truth.data(), truth.size() * 8, "truth block");
    file.truth = std::move(truth);
  }
  return file;
}

void write_bgs_csv(const std::string& path, const DistributedBgs& data) {
  std::ofstream out = open_out(path);
  for (std::size_t j = 0; j < data.n_traces; ++j) {
    out << (j ? "," : "") << j;
  }
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < data.sweep.n_points; ++i) {
    for (std::size_t j = 0; j < data.n_traces; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.at(i, j));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw FormatError("write failed: " + path);
}

DistributedBgs read_bgs_csv(const std::string& path, double f_min, double f_max) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV", 0);

  std::size_t n_traces = 1;
  for (char c : line) n_traces += (c == ',') ? 1 : 0;

  std::vector<double> rows;
  std::size_t n_rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t got = 0;
    while (std::getline(ss, cell, ',')) {
      rows.push_back(std::stod(cell));
      ++got;
    }
    if (got != n_traces) {
      throw FormatError("CSV row " + std::to_string(n_rows + 2) + " has " + std::to_string(got) +
                        " cells, expected " + std::to_string(n_traces));
    }
    ++n_rows;
  }
  if (n_rows < 3) throw FormatError("CSV needs at least 3 frequency rows");

  DistributedBgs d;
  d.sweep = SweepRange{f_min, f_max, n_rows};
  d.n_traces = n_traces;
  d.gains.resize(n_rows * n_traces);
  for (std::size_t i = 0; i < n_rows; ++i) {
    for (std::size_t j = 0; j < n_traces; ++j) {
      d.at(i, j) = rows[i * n_traces + j];
    }
  }
  return d;
}

void write_bfs_bin(const std::string& path, const BfsTrace& trace) {
  std::ofstream out = open_out(path);
  put_bytes(out, "TRUE", 4);
  put_u32(out, static_cast<std::uint32_t>(trace.values.size()));
  put_bytes(out, trace.values.data(), trace.values.size() * 8);
  if (!out) throw FormatError("write failed: " + path);
}

std::vector<double> read_bfs_bin(const std::string& path) {
  std::ifstream in = open_in(path);
  Reader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "TRUE", 4) != 0) throw FormatError("bad magic, expected TRUE", 0);
  const std::uint32_t n = r.u32("count");
  std::vector<double> values(n);
  r.bytes(values.data(), values.size() * 8, "BFS values");
  return values;
}

}  // namespace bfs
