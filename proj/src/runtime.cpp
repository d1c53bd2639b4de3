#include "bgcut/runtime.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#ifndef BGCUT_BUILD_COMMIT
#define BGCUT_BUILD_COMMIT "unknown"
#endif

namespace bgcut {
namespace {

int g_max_threads = -1;  // -1: not yet read from the environment

int read_env_cap() {
  const char* v = std::getenv("BGCUT_THREADS");
  if (v == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || n < 1) return 1;
  return static_cast<int>(std::min<long>(n, 256));
}

}  // namespace

int max_threads() {
  if (g_max_threads < 0) g_max_threads = read_env_cap();
  return g_max_threads;
}

void set_max_threads(int n) { g_max_threads = std::max(1, n); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int threads = std::min<std::int64_t>(max_threads(), n);
  if (threads <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  const std::int64_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::int64_t b = t * chunk;
    const std::int64_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

std::string machine_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto pos = line.find(':');
      if (pos != std::string::npos) cpu = line.substr(pos + 2);
      break;
    }
  }
  std::ostringstream os;
  os << cpu << ", " << std::thread::hardware_concurrency() << " hw threads, "
     << "cap " << max_threads();
  return os.str();
}

std::string build_commit() { return BGCUT_BUILD_COMMIT; }

}  // namespace bgcut
