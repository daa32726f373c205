#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace apcon {

/// ρ(t_i, x_j) on a tensor grid; rows index time, columns index space.
struct DensityField {
  std::vector<double> t_grid;
  std::vector<double> x_grid;
  Eigen::MatrixXd rho;
  /// Free-form run metadata (solver, resolution, time step, ...).
  std::vector<std::pair<std::string, std::string>> metadata;

  bool same_grid(const DensityField& other) const;
  bool operator==(const DensityField& other) const;

  /// Binary layout (little-endian): magic "APCNDF01", u32 version = 1,
  /// u64 nt, u64 nx, nt + nx doubles (grids), nt*nx doubles (row-major ρ),
  /// u32 metadata count, then (string key, string value) pairs where a string
  /// is a u32 length followed by bytes.
  void save(std::ostream& out) const;
  static DensityField load(std::istream& in);
  void save(const std::string& path) const;
  static DensityField load(const std::string& path);
  /// CSV with header "t,x,rho", one row per grid point.
  void write_csv(std::ostream& out) const;
};

}  // namespace apcon
