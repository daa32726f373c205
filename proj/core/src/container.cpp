#include <fstream>
#include <iomanip>

#include "apcon/binary_io.hpp"
#include "apcon/data.hpp"
#include "apcon/density.hpp"

namespace apcon {

namespace {

constexpr char kDatasetMagic[9] = "APCNDS01";
constexpr char kDensityMagic[9] = "APCNDF01";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxDim = 1ull << 24;

std::uint64_t read_dim(std::istream& in, const char* what) {
  auto n = io::read<std::uint64_t>(in);
  if (n > kMaxDim) throw IoError(std::string("corrupt header: implausible ") + what + " " + std::to_string(n));
  return n;
}

std::vector<double> read_vector(std::istream& in, std::uint64_t n) {
  std::vector<double> v(n);
  io::read_doubles(in, v);
  return v;
}

template <typename T>
void save_to(const T& obj, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  obj.save(out);
}

template <typename T>
T load_from(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return T::load(in);
}

}  // namespace

void Dataset::save(std::ostream& out) const {
  out.write(kDatasetMagic, 8);
  io::write<std::uint32_t>(out, kVersion);
  io::write<std::uint32_t>(out, meta.problem == ProblemId::I ? 1u : 2u);
  io::write<std::uint64_t>(out, grid.x.size());
  io::write<std::uint64_t>(out, grid.v.size());
  io::write_doubles(out, grid.x);
  io::write_doubles(out, grid.v);
  io::write<std::uint64_t>(out, meta.m);
  io::write<double>(out, meta.l);
  io::write<std::uint64_t>(out, meta.seed);
  io::write<std::uint64_t>(out, meta.shuffle_seed);
  io::write<std::uint32_t>(out, meta.ratio_train);
  io::write<std::uint32_t>(out, meta.ratio_test);
  io::write_string(out, meta.kernel);
  io::write<std::uint64_t>(out, train.size());
  io::write<std::uint64_t>(out, test.size());
  for (const auto* part : {&train, &test})
    for (const auto& s : *part) {
      if (s.values.size() != grid.size()) throw ShapeError("sample does not match the dataset grid");
      io::write_doubles(out, std::span<const double>(s.values.data(), static_cast<std::size_t>(s.values.size())));
    }
}

Dataset Dataset::load(std::istream& in) {
  io::expect_magic(in, kDatasetMagic);
  if (auto v = io::read<std::uint32_t>(in); v != kVersion)
    throw IoError("unsupported dataset version " + std::to_string(v));
  Dataset d;
  const auto pid = io::read<std::uint32_t>(in);
  if (pid != 1 && pid != 2) throw IoError("corrupt header: problem id " + std::to_string(pid));
  d.meta.problem = pid == 1 ? ProblemId::I : ProblemId::II;
  const auto h = read_dim(in, "H"), w = read_dim(in, "W");
  d.grid.x = read_vector(in, h);
  d.grid.v = read_vector(in, w);
  d.meta.m = io::read<std::uint64_t>(in);
  d.meta.l = io::read<double>(in);
  d.meta.seed = io::read<std::uint64_t>(in);
  d.meta.shuffle_seed = io::read<std::uint64_t>(in);
  d.meta.ratio_train = io::read<std::uint32_t>(in);
  d.meta.ratio_test = io::read<std::uint32_t>(in);
  d.meta.kernel = io::read_string(in);
  const auto n_train = read_dim(in, "train count"), n_test = read_dim(in, "test count");
  for (auto [part, n] : {std::pair{&d.train, n_train}, std::pair{&d.test, n_test}})
    for (std::uint64_t i = 0; i < n; ++i) {
      InitialFunctionSample s{d.meta.problem, Eigen::VectorXd(static_cast<Eigen::Index>(h * w))};
      io::read_doubles(in, std::span<double>(s.values.data(), static_cast<std::size_t>(h * w)));
      part->push_back(std::move(s));
    }
  return d;
}

void Dataset::save(const std::string& path) const { save_to(*this, path); }
Dataset Dataset::load(const std::string& path) { return load_from<Dataset>(path); }

void Dataset::write_csv(std::ostream& out) const {
  out << "split,sample,x,v,value\n" << std::setprecision(17);
  for (auto [name, part] : {std::pair{"train", &train}, std::pair{"test", &test}})
    for (std::size_t k = 0; k < part->size(); ++k)
      for (Eigen::Index i = 0; i < grid.size(); ++i)
        out << name << ',' << k << ',' << grid.x_at(i) << ',' << grid.v_at(i) << ',' << (*part)[k].values(i) << '\n';
}

bool DensityField::same_grid(const DensityField& other) const {
  return t_grid == other.t_grid && x_grid == other.x_grid;
}

bool DensityField::operator==(const DensityField& other) const {
  return same_grid(other) && rho == other.rho && metadata == other.metadata;
}

void DensityField::save(std::ostream& out) const {
  if (rho.rows() != static_cast<Eigen::Index>(t_grid.size()) || rho.cols() != static_cast<Eigen::Index>(x_grid.size()))
    throw ShapeError("density values do not match the grid");
  out.write(kDensityMagic, 8);
  io::write<std::uint32_t>(out, kVersion);
  io::write<std::uint64_t>(out, t_grid.size());
  io::write<std::uint64_t>(out, x_grid.size());
  io::write_doubles(out, t_grid);
  io::write_doubles(out, x_grid);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = rho;
  io::write_doubles(out, std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    io::write_string(out, k);
    io::write_string(out, v);
  }
}

DensityField DensityField::load(std::istream& in) {
  io::expect_magic(in, kDensityMagic);
  if (auto v = io::read<std::uint32_t>(in); v != kVersion)
    throw IoError("unsupported density version " + std::to_string(v));
  DensityField f;
  const auto nt = read_dim(in, "nt"), nx = read_dim(in, "nx");
  f.t_grid = read_vector(in, nt);
  f.x_grid = read_vector(in, nx);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(nt, nx);
  io::read_doubles(in, std::span<double>(rm.data(), static_cast<std::size_t>(rm.size())));
  f.rho = rm;
  const auto n_meta = io::read<std::uint32_t>(in);
  if (n_meta > 4096) throw IoError("corrupt header: metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = io::read_string(in);
    auto v = io::read_string(in);
    f.metadata.emplace_back(std::move(k), std::move(v));
  }
  return f;
}

void DensityField::save(const std::string& path) const { save_to(*this, path); }
DensityField DensityField::load(const std::string& path) { return load_from<DensityField>(path); }

void DensityField::write_csv(std::ostream& out) const {
  out << "t,x,rho\n" << std::setprecision(17);
  for (std::size_t i = 0; i < t_grid.size(); ++i)
    for (std::size_t j = 0; j < x_grid.size(); ++j)
      out << t_grid[i] << ',' << x_grid[j] << ',' << rho(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
          << '\n';
}

}  // namespace apcon
