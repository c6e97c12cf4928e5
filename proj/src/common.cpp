#include "pifield/common.hpp"

#include <cstdlib>

namespace pifield {

int thread_count() {
  static int n = [] {
    if (const char* env = std::getenv("PIFIELD_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
  }();
  return n;
}

void parallel_for(long n, const std::function<void(long, long)>& fn) {
  if (n <= 0) return;
  int workers = thread_count();
  if (workers <= 1 || n < 256) {
    fn(0, n);
    return;
  }
  long chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    long b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pifield
