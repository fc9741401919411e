#include "adpde/parallel.hpp"

#include <cstdlib>
#include <string>

namespace adpde {

std::size_t worker_count() {
  if (const char* env = std::getenv("ADPF_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::vector<double> pairwise_sum(std::vector<std::vector<double>> bufs) {
  if (bufs.empty()) return {};
  for (std::size_t width = 1; width < bufs.size(); width *= 2) {
    for (std::size_t i = 0; i + width < bufs.size(); i += 2 * width) {
      auto& a = bufs[i];
      const auto& b = bufs[i + width];
      for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
    }
  }
  return std::move(bufs.front());
}

double pairwise_sum(const std::vector<double>& xs) {
  std::vector<std::vector<double>> b;
  b.reserve(xs.size());
  for (double x : xs) b.push_back({x});
  auto r = pairwise_sum(std::move(b));
  return r.empty() ? 0.0 : r[0];
}

}  // namespace adpde
