#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace twoscale {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as
/// easy as 1, 2, 3"). Pure: the same counter and key always give the same
/// 128 output bits.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

enum class Driver : std::uint8_t {
  W1 = 1,   // slow noise
  W2 = 2,   // fast noise
  Aux = 3,  // sub-simulations (estimators, samplers)
};

/// Address of one independent Gaussian stream. `sub` separates several streams
/// that belong to the same (path, driver), e.g. estimator replicas.
struct StreamId {
  std::uint64_t path = 0;
  Driver driver = Driver::W1;
  std::uint32_t sub = 0;

  friend bool operator==(const StreamId&, const StreamId&) = default;
};

/// Counter-based source of Brownian increments. The k-th standard normal of a
/// stream is a pure function of (seed, id, k), so draws never depend on
/// thread, host or how a caller splits its requests.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, StreamId id, std::size_t dim);

  std::uint64_t seed() const noexcept { return seed_; }
  const StreamId& id() const noexcept { return id_; }
  std::size_t dim() const noexcept { return dim_; }
  /// Number of m-vectors consumed so far.
  std::uint64_t position() const noexcept { return position_; }

  /// `count` i.i.d. N(0, dt I_m) vectors, flattened vector-major.
  std::vector<double> gaussian_increments(std::size_t count, double dt);
  /// In-place variant; `out.size()` must be a multiple of dim().
  void gaussian_increments(std::span<double> out, double dt);

  /// Increments of eps^{-1/2} W over steps dt. Throws DomainError if eps <= 0.
  std::vector<double> fast_increments(std::size_t count, double dt, double epsilon);
  void fast_increments(std::span<double> out, double dt, double epsilon);

  /// Standard normal number `index` of this stream (does not move position).
  double standard_normal(std::uint64_t index) const noexcept;
  /// Uniform on (0, 1) drawn from the same counter space as the normals.
  double uniform(std::uint64_t index) const noexcept;

 private:
  std::uint64_t seed_;
  StreamId id_;
  std::size_t dim_;
  std::uint64_t position_ = 0;
  std::array<std::uint32_t, 2> key_;

  // One Philox block yields two normals; remember the last one.
  mutable std::uint64_t cached_block_ = ~std::uint64_t{0};
  mutable std::array<double, 2> cached_{};

  std::array<std::uint32_t, 4> block(std::uint64_t block_index, std::uint32_t domain) const noexcept;
};

}  // namespace twoscale
