#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace adpde {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al. counter-based generator).
PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

PhiloxKey philox_key(std::uint64_t seed);

/// Uniform in (0, 1) from the top 52 bits of two words; never returns 0 or 1.
double unit_open(std::uint32_t hi, std::uint32_t lo);

/// Two independent standard normals from one Philox block (Box-Muller).
std::array<double, 2> normal_pair(const PhiloxCounter& ctr, const PhiloxKey& key);

/// Sequential stream for generators: draw k of stream s is a pure function
/// of (seed, s, k).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint32_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  PhiloxKey key_;
  std::uint32_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Gaussian increments for Euler-Maruyama: eta(frame, substep, cell) is a
/// pure function of the seed and those three indices.
class NoiseProcess {
 public:
  explicit NoiseProcess(std::uint64_t seed) : key_(philox_key(seed)) {}

  double eta(std::uint32_t frame, std::uint32_t substep, std::uint64_t cell) const;
  /// out[i] = eta(frame, substep, i).
  void fill(std::uint32_t frame, std::uint32_t substep, std::span<double> out) const;

 private:
  PhiloxKey key_;
};

}  // namespace adpde
