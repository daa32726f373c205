#pragma once

#include <vector>

#include <Eigen/Dense>

namespace apcon {

/// Uniform (x, v) grid of a discretised initial function. Values are stored
/// row-major: flat index h*W + w holds (x_h, v_w).
struct InputGrid {
  std::vector<double> x;
  std::vector<double> v;

  int height() const { return static_cast<int>(x.size()); }
  int width() const { return static_cast<int>(v.size()); }
  int size() const { return height() * width(); }
  double x_at(Eigen::Index flat) const { return x[static_cast<std::size_t>(flat / width())]; }
  double v_at(Eigen::Index flat) const { return v[static_cast<std::size_t>(flat % width())]; }

  /// H points on [x_left, x_right] and W points on [-1, 1], endpoints included.
  static InputGrid uniform(int height, int width, double x_left = 0.0, double x_right = 1.0);
};

std::vector<double> linspace(double a, double b, int n);

}  // namespace apcon
