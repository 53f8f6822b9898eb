#ifndef BFS_ERRORS_HPP
#define BFS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace bfs {

// Malformed or truncated input files. Carries the byte offset where
// parsing failed when known (offset < 0 means unknown).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg, long long offset = -1)
      : std::runtime_error(offset >= 0 ? msg + " (byte offset " + std::to_string(offset) + ")"
                                       : msg),
        offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

// Non-finite values or numerically impossible requests during computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bfs

#endif
