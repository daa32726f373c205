#include "apcon/grid.hpp"

#include "apcon/errors.hpp"

namespace apcon {

std::vector<double> linspace(double a, double b, int n) {
  if (n < 1) throw ConfigError("linspace needs at least one point");
  std::vector<double> out(static_cast<std::size_t>(n));
  if (n == 1) {
    out[0] = a;
    return out;
  }
  const double h = (b - a) / (n - 1);
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = a + h * i;
  out.back() = b;
  return out;
}

InputGrid InputGrid::uniform(int height, int width, double x_left, double x_right) {
  if (height < 2 || width < 2) throw ConfigError("input grid needs at least 2 points per axis");
  return InputGrid{linspace(x_left, x_right, height), linspace(-1.0, 1.0, width)};
}

}  // namespace apcon
