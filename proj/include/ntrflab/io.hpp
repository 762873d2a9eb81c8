#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>

namespace ntrflab {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

/// Shortest decimal string that parses back to the same double.
std::string format_double(double value);

/// Sequential writer for the versioned binary containers. Every container
/// starts with an 8-byte magic and a u32 version.
class BinaryWriter {
 public:
  BinaryWriter(const std::filesystem::path& path, std::string_view magic, std::uint32_t version);

  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(std::span<const double> v) { raw(v.data(), v.size_bytes()); }
  void i8s(std::span<const std::int8_t> v) { raw(v.data(), v.size_bytes()); }
  /// Flushes and throws IoError if any write failed.
  void finish();

 private:
  void raw(const void* data, std::size_t bytes);

  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  /// Throws IoError if the file cannot be opened, the magic differs, or the
  /// version is newer than `max_version`.
  BinaryReader(const std::filesystem::path& path, std::string_view magic, std::uint32_t max_version);

  std::uint32_t version() const { return version_; }
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out) { raw(out.data(), out.size_bytes()); }
  void i8s(std::span<std::int8_t> out) { raw(out.data(), out.size_bytes()); }
  /// Throws IoError unless at least `count` values of `width` bytes remain.
  /// Call before sizing buffers from header fields.
  void expect_available(std::uint64_t count, std::uint64_t width);
  /// Throws IoError if bytes remain.
  void expect_end();

 private:
  void raw(void* data, std::size_t bytes);

  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::uint32_t version_ = 0;
};

std::string read_text_file(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace ntrflab
