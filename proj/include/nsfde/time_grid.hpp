#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsfde {

// Partition 0 = t_0 < t_1 < ... < t_K = T of a finite horizon.  Most grids
// are uniform; the flag is queried by samplers that have fast uniform paths.
class TimeGrid {
 public:
  TimeGrid(double horizon, int steps) {
    if (!(horizon > 0.0)) throw std::domain_error("TimeGrid: horizon must be positive");
    if (steps < 1) throw std::domain_error("TimeGrid: need at least one step");
    points_.resize(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k)
      points_[static_cast<std::size_t>(k)] = horizon * static_cast<double>(k) / steps;
    points_.back() = horizon;
    uniform_ = true;
  }

  explicit TimeGrid(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw std::domain_error("TimeGrid: need at least two points");
    if (points_.front() != 0.0) throw std::domain_error("TimeGrid: grid must start at 0");
    for (std::size_t k = 1; k < points_.size(); ++k)
      if (!(points_[k] > points_[k - 1]))
        throw std::domain_error("TimeGrid: points must be strictly increasing");
    const double h0 = points_[1] - points_[0];
    uniform_ = true;
    for (std::size_t k = 1; k + 1 < points_.size(); ++k)
      if (std::abs((points_[k + 1] - points_[k]) - h0) > 1e-12 * horizon()) {
        uniform_ = false;
        break;
      }
  }

  int steps() const { return static_cast<int>(points_.size()) - 1; }
  std::size_t size() const { return points_.size(); }
  double horizon() const { return points_.back(); }
  double point(int k) const { return points_.at(static_cast<std::size_t>(k)); }
  double step(int k) const {  // h_k = t_k - t_{k-1}, k = 1..K
    return points_.at(static_cast<std::size_t>(k)) - points_.at(static_cast<std::size_t>(k) - 1);
  }
  bool uniform() const { return uniform_; }
  const std::vector<double>& points() const { return points_; }

  // Index of a time that must already be a grid point (up to round-off).
  int index_at(double t) const {
    const double tol = 1e-9 * std::max(1.0, horizon());
    // uniform fast path, then exact scan
    if (uniform_) {
      const double h = points_[1];
      const int k = static_cast<int>(std::lround(t / h));
      if (k >= 0 && k <= steps() && std::abs(point(k) - t) <= tol) return k;
    } else {
      for (int k = 0; k <= steps(); ++k)
        if (std::abs(point(k) - t) <= tol) return k;
    }
    throw std::invalid_argument("TimeGrid: t = " + std::to_string(t) +
                                " is not a grid point");
  }

  // Coarse grid keeping every `stride`-th point (K must be divisible).
  TimeGrid coarsened(int stride) const {
    if (stride < 1 || steps() % stride != 0)
      throw std::invalid_argument("TimeGrid: stride must divide the step count");
    std::vector<double> pts;
    pts.reserve(static_cast<std::size_t>(steps() / stride) + 1);
    for (int k = 0; k <= steps(); k += stride) pts.push_back(point(k));
    return TimeGrid(std::move(pts));
  }

  bool operator==(const TimeGrid& other) const { return points_ == other.points_; }

 private:
  std::vector<double> points_;
  bool uniform_ = false;
};

}  // namespace nsfde
