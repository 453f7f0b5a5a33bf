#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace twoscale {

/// Number of grid intervals M = tau / h. Throws DomainError unless tau and h
/// are positive and tau / h is an integer to within one part in 1e9.
std::size_t grid_intervals(double tau, double h);

/// Non-owning, read-only window onto M+1 grid values of a history path on
/// [-tau, 0]. Node i sits at relative time -tau + i*h; values are stored
/// node-major, `dim` doubles per node.
class SegmentView {
 public:
  SegmentView(double tau, double h, std::size_t dim, std::span<const double> values);

  double tau() const noexcept { return tau_; }
  double step() const noexcept { return h_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t intervals() const noexcept { return nodes_ - 1; }
  std::size_t nodes() const noexcept { return nodes_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<const double> at(std::size_t node) const noexcept {
    return values_.subspan(node * dim_, dim_);
  }
  /// Value at theta = -tau.
  std::span<const double> oldest() const noexcept { return at(0); }
  /// Value at theta = 0.
  std::span<const double> newest() const noexcept { return at(nodes_ - 1); }

  /// Largest Euclidean norm over the grid nodes.
  double sup_norm() const noexcept;

  /// Piecewise-linear evaluation at theta in [-tau, 0]. Values within 1e-6*h
  /// beyond either end are clamped; anything further throws DomainError.
  std::vector<double> eval(double theta) const;

  /// Largest |v_{i+1} - v_i| / h over adjacent nodes.
  double lipschitz_modulus() const noexcept;

  bool same_shape(const SegmentView& other) const noexcept;

 private:
  double tau_;
  double h_;
  std::size_t dim_;
  std::size_t nodes_;
  std::span<const double> values_;
};

/// ||a - b||_inf over grid nodes. Throws UsageError on shape mismatch.
double sup_distance(const SegmentView& a, const SegmentView& b);

/// Owning grid representation of an element of C([-tau, 0]; R^n).
/// Immutable once built.
class Segment {
 public:
  Segment(double tau, double h, std::size_t dim, std::vector<double> values);

  static Segment constant(double tau, double h, std::span<const double> value);
  static Segment zero(double tau, double h, std::size_t dim);
  /// Samples `path(theta, out)` at every node.
  static Segment sample(double tau, double h, std::size_t dim,
                        const std::function<void(double, std::span<double>)>& path);
  /// Scalar convenience overload of `sample`.
  static Segment sample(double tau, double h, const std::function<double(double)>& path);
  static Segment copy_of(const SegmentView& view);

  SegmentView view() const noexcept { return {tau_, h_, dim_, values_}; }
  operator SegmentView() const noexcept { return view(); }  // NOLINT(google-explicit-constructor)

  double tau() const noexcept { return tau_; }
  double step() const noexcept { return h_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t intervals() const noexcept { return values_.size() / dim_ - 1; }
  std::size_t nodes() const noexcept { return values_.size() / dim_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::span<const double> at(std::size_t node) const noexcept { return view().at(node); }
  std::span<const double> newest() const noexcept { return view().newest(); }
  std::span<const double> oldest() const noexcept { return view().oldest(); }

  double sup_norm() const noexcept { return view().sup_norm(); }
  std::vector<double> eval(double theta) const { return view().eval(theta); }
  double lipschitz_modulus() const noexcept { return view().lipschitz_modulus(); }

  /// Window advanced by one grid step: oldest node dropped, `value` appended
  /// at theta = 0. Throws DataError on non-finite input.
  Segment shift_append(std::span<const double> value) const;

  /// Same path re-gridded with step `h` by linear interpolation.
  Segment resample(double h) const;

  friend bool operator==(const Segment&, const Segment&) = default;

 private:
  double tau_;
  double h_;
  std::size_t dim_;
  std::vector<double> values_;
};

void to_json(nlohmann::json& j, const Segment& seg);
/// Parses {"tau", "h", "n", "values": [[...], ...]}.
Segment segment_from_json(const nlohmann::json& j);

}  // namespace twoscale
