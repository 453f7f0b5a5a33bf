#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "twoscale/segment.hpp"

namespace twoscale {

/// Sliding window of the last M+1 grid values of a path, kept contiguous by
/// writing every value twice into a buffer of length 2(M+1). `view()` is the
/// current segment without copying.
class HistoryWindow {
 public:
  explicit HistoryWindow(const SegmentView& initial);

  void push(std::span<const double> value) noexcept;
  /// Overwrites the value at theta = 0 (used for restarts).
  void set_newest(std::span<const double> value) noexcept;

  SegmentView view() const noexcept {
    return {tau_, h_, dim_, std::span<const double>(buffer_).subspan(start_ * dim_, nodes_ * dim_)};
  }
  std::span<const double> newest() const noexcept { return slot((start_ + nodes_ - 1) % nodes_); }
  std::span<const double> oldest() const noexcept { return slot(start_); }

 private:
  std::span<const double> slot(std::size_t i) const noexcept {
    return std::span<const double>(buffer_).subspan(i * dim_, dim_);
  }
  void write(std::size_t i, std::span<const double> value) noexcept;

  double tau_;
  double h_;
  std::size_t dim_;
  std::size_t nodes_;
  std::size_t start_ = 0;
  std::vector<double> buffer_;
};

}  // namespace twoscale
