#include "rdl/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>

#ifdef RDL_HAVE_OPENMP
#include <omp.h>
#endif

namespace rdl {

namespace {

int env_threads() {
  if (const char *v = std::getenv("RDL_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

bool env_deterministic() {
  const char *v = std::getenv("RDL_DETERMINISTIC");
  return v && std::string(v) == "1";
}

std::atomic<int> g_threads{env_threads()};
std::atomic<bool> g_deterministic{env_deterministic()};

constexpr int kDeterministicChunks = 8;

}  // namespace

int thread_count() { return g_threads.load(); }
void set_thread_count(int n) { g_threads.store(std::max(1, n)); }

bool deterministic() { return g_deterministic.load(); }
void set_deterministic(bool on) { g_deterministic.store(on); }

int reduction_chunks(int n) {
  const int chunks = deterministic() ? kDeterministicChunks : thread_count();
  return std::max(1, std::min(chunks, n));
}

void parallel_chunks(int n, int chunks, const std::function<void(int, int, int)> &body) {
  chunks = std::max(1, std::min(chunks, std::max(n, 1)));
  auto range = [&](int c) {
    const int begin = static_cast<int>(static_cast<long long>(n) * c / chunks);
    const int end = static_cast<int>(static_cast<long long>(n) * (c + 1) / chunks);
    body(c, begin, end);
  };
#ifdef RDL_HAVE_OPENMP
  const int threads = std::min(thread_count(), chunks);
  if (threads > 1 && !omp_in_parallel()) {
#pragma omp parallel for num_threads(threads) schedule(static)
    for (int c = 0; c < chunks; ++c) range(c);
    return;
  }
#endif
  for (int c = 0; c < chunks; ++c) range(c);
}

void parallel_for(int n, const std::function<void(int)> &body) {
#ifdef RDL_HAVE_OPENMP
  const int threads = std::min(thread_count(), n);
  if (threads > 1 && !omp_in_parallel()) {
#pragma omp parallel for num_threads(threads) schedule(static)
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (int i = 0; i < n; ++i) body(i);
}

}  // namespace rdl
