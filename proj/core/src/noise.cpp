#include "twoscale/noise.hpp"

#include <cmath>
#include <numbers>

#include "twoscale/errors.hpp"

namespace twoscale {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

// Normals and uniforms live in disjoint counter domains.
constexpr std::uint32_t kNormalDomain = 0u;
constexpr std::uint32_t kUniformDomain = 1u;

inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32 | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) noexcept {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

NoiseStream::NoiseStream(std::uint64_t seed, StreamId id, std::size_t dim)
    : seed_(seed),
      id_(id),
      dim_(dim),
      key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {
  if (dim == 0) throw UsageError("noise stream dimension must be >= 1");
  if (id.path > 0xFFFFFFFFull) throw UsageError("path index must fit in 32 bits");
  if (id.sub > 0x00FFFFFFu) throw UsageError("sub-stream index must fit in 24 bits");
}

std::array<std::uint32_t, 4> NoiseStream::block(std::uint64_t block_index,
                                                std::uint32_t domain) const noexcept {
  // counter = [block lo, block hi (31 bits) | domain, path, driver | sub]
  const std::array<std::uint32_t, 4> ctr{
      static_cast<std::uint32_t>(block_index),
      static_cast<std::uint32_t>(block_index >> 32) ^ (domain << 31),
      static_cast<std::uint32_t>(id_.path),
      (static_cast<std::uint32_t>(id_.driver) << 24) | id_.sub};
  return philox4x32(ctr, key_);
}

double NoiseStream::standard_normal(std::uint64_t index) const noexcept {
  const std::uint64_t b = index >> 1;
  if (b != cached_block_) {
    const auto r = block(b, kNormalDomain);
    const double u1 = to_open_unit(r[0], r[1]);
    const double u2 = to_open_unit(r[2], r[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = {radius * std::cos(angle), radius * std::sin(angle)};
    cached_block_ = b;
  }
  return cached_[index & 1u];
}

double NoiseStream::uniform(std::uint64_t index) const noexcept {
  const auto r = block(index >> 1, kUniformDomain);
  return (index & 1u) == 0 ? to_open_unit(r[0], r[1]) : to_open_unit(r[2], r[3]);
}

void NoiseStream::gaussian_increments(std::span<double> out, double dt) {
  if (!(dt > 0.0)) throw DomainError("increment step dt must be positive");
  if (out.size() % dim_ != 0) throw UsageError("increment buffer is not a multiple of dim");
  const double scale = std::sqrt(dt);
  const std::uint64_t first = position_ * dim_;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * standard_normal(first + i);
  position_ += out.size() / dim_;
}

std::vector<double> NoiseStream::gaussian_increments(std::size_t count, double dt) {
  std::vector<double> out(count * dim_);
  gaussian_increments(out, dt);
  return out;
}

void NoiseStream::fast_increments(std::span<double> out, double dt, double epsilon) {
  if (!(epsilon > 0.0)) throw DomainError("fast increments need epsilon > 0");
  gaussian_increments(out, dt);
  if (epsilon == 1.0) return;
  const double scale = 1.0 / std::sqrt(epsilon);
  for (double& v : out) v *= scale;
}

std::vector<double> NoiseStream::fast_increments(std::size_t count, double dt, double epsilon) {
  std::vector<double> out(count * dim_);
  fast_increments(out, dt, epsilon);
  return out;
}

}  // namespace twoscale
