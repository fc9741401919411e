#include "adpde/rng.hpp"

#include <cmath>
#include <numbers>

namespace adpde {
namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;
constexpr std::uint32_t kNoiseTag = 0x4E4F4953u;
constexpr std::uint32_t kStreamTag = 0x5354524Du;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, ctr[0], hi0, lo0);
    mulhilo(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

PhiloxKey philox_key(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed),
          static_cast<std::uint32_t>(seed >> 32)};
}

double unit_open(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits =
      ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 12;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

std::array<double, 2> normal_pair(const PhiloxCounter& ctr,
                                  const PhiloxKey& key) {
  const auto w = philox4x32_10(ctr, key);
  const double u1 = unit_open(w[0], w[1]);
  const double u2 = unit_open(w[2], w[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(t), r * std::sin(t)};
}

CounterRng::CounterRng(std::uint64_t seed, std::uint32_t stream)
    : key_(philox_key(seed)), stream_(stream) {}

std::uint64_t CounterRng::next_u64() {
  if (used_ >= 4) {
    const PhiloxCounter ctr{static_cast<std::uint32_t>(block_),
                            static_cast<std::uint32_t>(block_ >> 32), stream_,
                            kStreamTag};
    buf_ = philox4x32_10(ctr, key_);
    ++block_;
    used_ = 0;
  }
  const std::uint64_t v =
      (static_cast<std::uint64_t>(buf_[used_]) << 32) | buf_[used_ + 1];
  used_ += 2;
  return v;
}

double CounterRng::uniform() {
  const std::uint64_t v = next_u64();
  return unit_open(static_cast<std::uint32_t>(v >> 32),
                   static_cast<std::uint32_t>(v));
}

double CounterRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

double NoiseProcess::eta(std::uint32_t frame, std::uint32_t substep,
                         std::uint64_t cell) const {
  const PhiloxCounter ctr{static_cast<std::uint32_t>(cell / 2), substep, frame,
                          kNoiseTag};
  return normal_pair(ctr, key_)[cell % 2];
}

void NoiseProcess::fill(std::uint32_t frame, std::uint32_t substep,
                        std::span<double> out) const {
  const std::size_t n = out.size();
  for (std::size_t pair = 0; 2 * pair < n; ++pair) {
    const PhiloxCounter ctr{static_cast<std::uint32_t>(pair), substep, frame,
                            kNoiseTag};
    const auto z = normal_pair(ctr, key_);
    out[2 * pair] = z[0];
    if (2 * pair + 1 < n) out[2 * pair + 1] = z[1];
  }
}

}  // namespace adpde
