#ifndef BFS_VERSION_HPP
#define BFS_VERSION_HPP

namespace bfs {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace bfs

#endif
