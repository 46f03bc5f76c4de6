#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sysrisk/error.hpp"

namespace sysrisk {

/// Uniform time grid 0..T carrying named scalar series of equal length.
/// Series keep their insertion order, which is also the CSV column order.
class PathGrid {
public:
  PathGrid() = default;

  /// Grid with `intervals` steps on [0, t_final].
  static PathGrid uniform(double t_final, std::size_t intervals) {
    if (!(t_final > 0.0) || intervals == 0) throw InvalidArgument("PathGrid needs T > 0 and at least one interval");
    PathGrid g;
    g.t_.resize(intervals + 1);
    const double dt = t_final / static_cast<double>(intervals);
    for (std::size_t i = 0; i <= intervals; ++i) g.t_[i] = dt * static_cast<double>(i);
    g.t_.back() = t_final;
    return g;
  }

  /// Adopt an externally built time vector; it must be uniform to 1e-12 relative.
  static PathGrid from_times(std::vector<double> t) {
    if (t.size() < 2) throw ShapeError("PathGrid needs at least two time points");
    const double dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
    if (!(dt > 0.0)) throw ShapeError("PathGrid times must be increasing");
    for (std::size_t i = 1; i < t.size(); ++i)
      if (std::abs((t[i] - t[i - 1]) - dt) > 1e-12 * std::max(1.0, std::abs(t.back())) + 1e-12 * dt)
        throw ShapeError("PathGrid times are not uniform");
    PathGrid g;
    g.t_ = std::move(t);
    return g;
  }

  std::size_t size() const { return t_.size(); }
  std::size_t intervals() const { return t_.empty() ? 0 : t_.size() - 1; }
  double dt() const { return (t_.back() - t_.front()) / static_cast<double>(intervals()); }
  double t_final() const { return t_.back(); }
  const std::vector<double>& t() const { return t_; }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  const std::vector<double>& series(const std::string& name) const {
    if (const auto* s = find(name)) return *s;
    throw InvalidArgument("PathGrid has no series '" + name + "'");
  }

  std::vector<double>& series(const std::string& name) {
    if (auto* s = const_cast<std::vector<double>*>(std::as_const(*this).find(name))) return *s;
    throw InvalidArgument("PathGrid has no series '" + name + "'");
  }

  /// Insert or replace a series.
  void set(const std::string& name, std::vector<double> values) {
    if (values.size() != t_.size())
      throw ShapeError("series '" + name + "' has " + std::to_string(values.size()) + " points, grid has " +
                       std::to_string(t_.size()));
    for (auto& [n, v] : series_)
      if (n == name) {
        v = std::move(values);
        return;
      }
    series_.emplace_back(name, std::move(values));
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, v] : series_) out.push_back(n);
    return out;
  }

  /// Header `t,<series...>`, 17 significant digits, LF line endings.
  void write_csv(std::ostream& os) const {
    os << 't';
    for (const auto& [n, v] : series_) os << ',' << n;
    os << '\n';
    char buf[32];
    for (std::size_t i = 0; i < t_.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t_[i]);
      os << buf;
      for (const auto& [n, v] : series_) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        os << ',' << buf;
      }
      os << '\n';
    }
  }

  std::string to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }

  friend bool operator==(const PathGrid&, const PathGrid&) = default;

private:
  const std::vector<double>* find(const std::string& name) const {
    for (const auto& [n, v] : series_)
      if (n == name) return &v;
    return nullptr;
  }

  std::vector<double> t_;
  std::vector<std::pair<std::string, std::vector<double>>> series_;
};

} // namespace sysrisk
