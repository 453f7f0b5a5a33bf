#include "twoscale/segment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "twoscale/errors.hpp"

namespace twoscale {

namespace {

double euclidean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::size_t grid_intervals(double tau, double h) {
  if (!(tau > 0.0) || !(h > 0.0) || !std::isfinite(tau) || !std::isfinite(h)) {
    std::ostringstream os;
    os << "segment grid needs tau > 0 and h > 0 (got tau=" << tau << ", h=" << h << ")";
    throw DomainError(os.str());
  }
  const double ratio = tau / h;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, rounded)) {
    std::ostringstream os;
    os.precision(17);
    os << "step h=" << h << " does not divide tau=" << tau << " (tau/h=" << ratio << ")";
    throw DomainError(os.str());
  }
  return static_cast<std::size_t>(rounded);
}

SegmentView::SegmentView(double tau, double h, std::size_t dim, std::span<const double> values)
    : tau_(tau), h_(h), dim_(dim), nodes_(dim == 0 ? 0 : values.size() / dim), values_(values) {
  if (dim == 0 || values.size() % dim != 0 || nodes_ < 2) {
    throw UsageError("segment view needs dim >= 1 and at least two nodes");
  }
}

double SegmentView::sup_norm() const noexcept {
  double best = 0.0;
  for (std::size_t i = 0; i < nodes_; ++i) best = std::max(best, euclidean(at(i)));
  return best;
}

std::vector<double> SegmentView::eval(double theta) const {
  const double slack = 1e-6 * h_;
  if (theta < -tau_ - slack || theta > slack || std::isnan(theta)) {
    std::ostringstream os;
    os << "theta=" << theta << " outside [-" << tau_ << ", 0]";
    throw DomainError(os.str());
  }
  double pos = std::clamp((theta + tau_) / h_, 0.0, static_cast<double>(nodes_ - 1));
  // Grid hits return the stored node exactly.
  if (std::abs(pos - std::round(pos)) < 1e-9) pos = std::round(pos);
  const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), nodes_ - 1);
  const double frac = pos - static_cast<double>(lo);
  auto left = at(lo);
  std::vector<double> out(left.begin(), left.end());
  if (frac > 0.0 && lo + 1 < nodes_) {
    auto right = at(lo + 1);
    for (std::size_t c = 0; c < dim_; ++c) out[c] = left[c] + frac * (right[c] - left[c]);
  }
  return out;
}

double SegmentView::lipschitz_modulus() const noexcept {
  double best = 0.0;
  for (std::size_t i = 0; i + 1 < nodes_; ++i) {
    auto a = at(i);
    auto b = at(i + 1);
    double s = 0.0;
    for (std::size_t c = 0; c < dim_; ++c) s += (b[c] - a[c]) * (b[c] - a[c]);
    best = std::max(best, std::sqrt(s) / h_);
  }
  return best;
}

bool SegmentView::same_shape(const SegmentView& other) const noexcept {
  return dim_ == other.dim_ && nodes_ == other.nodes_ && h_ == other.h_;
}

double sup_distance(const SegmentView& a, const SegmentView& b) {
  if (a.dim() != b.dim() || a.nodes() != b.nodes()) {
    throw UsageError("sup_distance: segments differ in shape");
  }
  const auto va = a.values();
  const auto vb = b.values();
  const std::size_t n = a.dim();
  double best = 0.0;
  for (std::size_t i = 0; i < va.size(); i += n) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += (va[i + c] - vb[i + c]) * (va[i + c] - vb[i + c]);
    best = std::max(best, s);
  }
  return std::sqrt(best);
}

Segment::Segment(double tau, double h, std::size_t dim, std::vector<double> values)
    : tau_(tau), h_(h), dim_(dim), values_(std::move(values)) {
  const std::size_t m = grid_intervals(tau, h);
  if (dim == 0) throw UsageError("segment dimension must be >= 1");
  if (values_.size() != (m + 1) * dim) {
    std::ostringstream os;
    os << "segment expects " << (m + 1) << " nodes of dimension " << dim << ", got "
       << values_.size() << " values";
    throw UsageError(os.str());
  }
  if (!all_finite(values_)) throw DataError("segment values must be finite");
}

Segment Segment::constant(double tau, double h, std::span<const double> value) {
  const std::size_t m = grid_intervals(tau, h);
  std::vector<double> values;
  values.reserve((m + 1) * value.size());
  for (std::size_t i = 0; i <= m; ++i) values.insert(values.end(), value.begin(), value.end());
  return {tau, h, value.size(), std::move(values)};
}

Segment Segment::zero(double tau, double h, std::size_t dim) {
  const std::vector<double> z(dim, 0.0);
  return constant(tau, h, z);
}

Segment Segment::sample(double tau, double h, std::size_t dim,
                        const std::function<void(double, std::span<double>)>& path) {
  const std::size_t m = grid_intervals(tau, h);
  std::vector<double> values((m + 1) * dim);
  for (std::size_t i = 0; i <= m; ++i) {
    // Last node pinned to exactly 0 so rounding never leaks into theta > 0.
    const double theta = i == m ? 0.0 : -tau + static_cast<double>(i) * h;
    path(theta, std::span<double>(values).subspan(i * dim, dim));
  }
  return {tau, h, dim, std::move(values)};
}

Segment Segment::sample(double tau, double h, const std::function<double(double)>& path) {
  return sample(tau, h, 1, [&](double theta, std::span<double> out) { out[0] = path(theta); });
}

Segment Segment::copy_of(const SegmentView& view) {
  return {view.tau(), view.step(), view.dim(),
          std::vector<double>(view.values().begin(), view.values().end())};
}

Segment Segment::shift_append(std::span<const double> value) const {
  if (value.size() != dim_) throw UsageError("shift_append: dimension mismatch");
  if (!all_finite(value)) throw DataError("shift_append: appended value is not finite");
  std::vector<double> next(values_.begin() + static_cast<std::ptrdiff_t>(dim_), values_.end());
  next.insert(next.end(), value.begin(), value.end());
  return {tau_, h_, dim_, std::move(next)};
}

Segment Segment::resample(double h) const {
  if (h == h_) return *this;
  const SegmentView src = view();
  return sample(tau_, h, dim_, [&](double theta, std::span<double> out) {
    const auto v = src.eval(theta);
    std::copy(v.begin(), v.end(), out.begin());
  });
}

void to_json(nlohmann::json& j, const Segment& seg) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < seg.nodes(); ++i) {
    auto v = seg.at(i);
    rows.push_back(std::vector<double>(v.begin(), v.end()));
  }
  j = nlohmann::json{{"tau", seg.tau()}, {"h", seg.step()}, {"n", seg.dim()}, {"values", rows}};
}

Segment segment_from_json(const nlohmann::json& j) {
  try {
    const double tau = j.at("tau").get<double>();
    const double h = j.at("h").get<double>();
    const auto n = j.at("n").get<std::size_t>();
    std::vector<double> flat;
    for (const auto& row : j.at("values")) {
      const auto v = row.get<std::vector<double>>();
      if (v.size() != n) throw ConfigError("segment JSON row has wrong dimension");
      flat.insert(flat.end(), v.begin(), v.end());
    }
    return {tau, h, n, std::move(flat)};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed segment JSON: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid segment JSON: ") + e.what());
  }
}

}  // namespace twoscale
