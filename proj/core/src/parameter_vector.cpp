#include "apcon/parameter_vector.hpp"

#include <algorithm>
#include <fstream>

#include "apcon/binary_io.hpp"
#include "apcon/errors.hpp"

namespace apcon {

namespace {
constexpr char kMagic[9] = "APCNPV01";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::size_t ParameterVector::add_segment(std::string name, std::size_t rows, std::size_t cols) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter segment '" + name + "'");
  Segment seg{std::move(name), values_.size(), rows, cols};
  values_.resize(values_.size() + seg.length(), 0.0);
  index_.emplace(seg.name, segments_.size());
  segments_.push_back(std::move(seg));
  return segments_.size() - 1;
}

std::size_t ParameterVector::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("no parameter segment named '" + std::string(name) + "'");
  return it->second;
}

bool ParameterVector::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::span<double> ParameterVector::slice(std::size_t index) {
  const auto& s = segments_.at(index);
  return std::span<double>(values_).subspan(s.offset, s.length());
}

std::span<const double> ParameterVector::slice(std::size_t index) const {
  const auto& s = segments_.at(index);
  return std::span<const double>(values_).subspan(s.offset, s.length());
}

Eigen::Map<Eigen::MatrixXd> ParameterVector::matrix(std::size_t index) {
  const auto& s = segments_.at(index);
  return {values_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
          static_cast<Eigen::Index>(s.cols)};
}

Eigen::Map<const Eigen::MatrixXd> ParameterVector::matrix(std::size_t index) const {
  const auto& s = segments_.at(index);
  return {values_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
          static_cast<Eigen::Index>(s.cols)};
}

const std::string& ParameterVector::segment_name_at(std::size_t position) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), position,
                             [](std::size_t pos, const Segment& s) { return pos < s.offset; });
  if (it == segments_.begin() || position >= values_.size())
    throw ShapeError("parameter position out of range");
  return std::prev(it)->name;
}

void ParameterVector::save(std::ostream& out) const {
  out.write(kMagic, 8);
  io::write<std::uint32_t>(out, kVersion);
  io::write<std::uint64_t>(out, segments_.size());
  for (const auto& s : segments_) {
    io::write_string(out, s.name);
    io::write<std::uint64_t>(out, s.offset);
    io::write<std::uint64_t>(out, s.rows);
    io::write<std::uint64_t>(out, s.cols);
  }
  io::write<std::uint64_t>(out, values_.size());
  io::write_doubles(out, values_);
}

ParameterVector ParameterVector::load(std::istream& in) {
  io::expect_magic(in, kMagic);
  auto version = io::read<std::uint32_t>(in);
  if (version != kVersion) throw IoError("unsupported parameter container version " + std::to_string(version));
  auto count = io::read<std::uint64_t>(in);
  if (count > (1u << 24)) throw IoError("corrupt header: segment count");
  ParameterVector pv;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = io::read_string(in);
    auto offset = io::read<std::uint64_t>(in);
    auto rows = io::read<std::uint64_t>(in);
    auto cols = io::read<std::uint64_t>(in);
    if (offset != pv.size()) throw IoError("corrupt header: segment '" + name + "' offset mismatch");
    pv.add_segment(std::move(name), rows, cols);
  }
  auto total = io::read<std::uint64_t>(in);
  if (total != pv.size()) throw IoError("corrupt header: value count mismatch");
  io::read_doubles(in, pv.values_);
  return pv;
}

void ParameterVector::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  save(out);
}

ParameterVector ParameterVector::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return load(in);
}

std::uint64_t ParameterVector::layout_hash() const {
  std::uint64_t h = io::kFnvOffset;
  for (const auto& s : segments_) {
    h = io::fnv1a(h, s.name.data(), s.name.size());
    std::uint64_t dims[2] = {s.rows, s.cols};
    h = io::fnv1a(h, dims, sizeof(dims));
  }
  return h;
}

}  // namespace apcon
