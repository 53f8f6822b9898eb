#ifndef BFS_THREADS_HPP
#define BFS_THREADS_HPP

namespace bfs {

// Upper bound on worker threads used by parallel loops (convolutions,
// per-column fitting). 0 selects the hardware concurrency. All parallel
// code writes disjoint outputs with a fixed per-element accumulation
// order, so results are bit-identical for every thread count.
void set_max_threads(int n);
int max_threads();

}  // namespace bfs

#endif
