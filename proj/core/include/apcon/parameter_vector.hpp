#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace apcon {

/// One named, contiguous block of a ParameterVector. Blocks are stored
/// column-major as a rows x cols matrix.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t length() const { return rows * cols; }
  bool operator==(const Segment&) const = default;
};

/// Flat collection of network parameters with a named segment table.
///
/// Binary layout (all integers little-endian):
///   magic "APCNPV01" (8 bytes), u32 version = 1, u64 segment count,
///   per segment: u32 name length, name bytes, u64 offset, u64 rows, u64 cols,
///   u64 value count, then value count little-endian IEEE-754 doubles.
class ParameterVector {
 public:
  ParameterVector() = default;

  /// Appends a zero-initialised rows x cols block; returns its segment index.
  std::size_t add_segment(std::string name, std::size_t rows, std::size_t cols);

  std::size_t size() const { return values_.size(); }
  std::size_t segment_count() const { return segments_.size(); }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(std::size_t index) const { return segments_.at(index); }
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> slice(std::size_t index);
  std::span<const double> slice(std::size_t index) const;

  Eigen::Map<Eigen::MatrixXd> matrix(std::size_t index);
  Eigen::Map<const Eigen::MatrixXd> matrix(std::size_t index) const;

  /// Name of the segment containing flat position `position`.
  const std::string& segment_name_at(std::size_t position) const;

  void save(std::ostream& out) const;
  static ParameterVector load(std::istream& in);
  void save(const std::string& path) const;
  static ParameterVector load(const std::string& path);

  /// FNV-1a hash over the segment table (names and shapes, not values).
  std::uint64_t layout_hash() const;

  bool operator==(const ParameterVector& other) const {
    return segments_ == other.segments_ && values_ == other.values_;
  }

 private:
  std::vector<double> values_;
  std::vector<Segment> segments_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace apcon
