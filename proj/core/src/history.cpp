#include "twoscale/history.hpp"

#include <algorithm>

namespace twoscale {

HistoryWindow::HistoryWindow(const SegmentView& initial)
    : tau_(initial.tau()),
      h_(initial.step()),
      dim_(initial.dim()),
      nodes_(initial.nodes()),
      buffer_(2 * initial.nodes() * initial.dim()) {
  const auto v = initial.values();
  std::copy(v.begin(), v.end(), buffer_.begin());
  std::copy(v.begin(), v.end(), buffer_.begin() + static_cast<std::ptrdiff_t>(v.size()));
}

void HistoryWindow::write(std::size_t i, std::span<const double> value) noexcept {
  std::copy(value.begin(), value.end(), buffer_.begin() + static_cast<std::ptrdiff_t>(i * dim_));
  std::copy(value.begin(), value.end(),
            buffer_.begin() + static_cast<std::ptrdiff_t>((i + nodes_) * dim_));
}

void HistoryWindow::push(std::span<const double> value) noexcept {
  // The slot of the dropped oldest node becomes the newest.
  write(start_, value);
  start_ = start_ + 1 == nodes_ ? 0 : start_ + 1;
}

void HistoryWindow::set_newest(std::span<const double> value) noexcept {
  write((start_ + nodes_ - 1) % nodes_, value);
}

}  // namespace twoscale
