#include "ntrflab/io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "ntrflab/error.hpp"

namespace ntrflab {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw IoError("could not format double");
  return {buf.data(), end};
}

BinaryWriter::BinaryWriter(const std::filesystem::path& path, std::string_view magic, std::uint32_t version)
    : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  std::array<char, 8> tag{};
  std::copy_n(magic.begin(), std::min<std::size_t>(magic.size(), tag.size()), tag.begin());
  raw(tag.data(), tag.size());
  u32(version);
}

void BinaryWriter::raw(const void* data, std::size_t bytes) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

void BinaryWriter::finish() {
  out_.flush();
  if (!out_) throw IoError("write to " + path_.string() + " failed");
  out_.close();
}

BinaryReader::BinaryReader(const std::filesystem::path& path, std::string_view magic, std::uint32_t max_version)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path.string());
  std::error_code ec;
  size_ = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());
  std::array<char, 8> tag{};
  raw(tag.data(), tag.size());
  std::array<char, 8> want{};
  std::copy_n(magic.begin(), std::min<std::size_t>(magic.size(), want.size()), want.begin());
  if (tag != want) throw IoError(path.string() + ": bad magic, expected " + std::string(magic));
  version_ = u32();
  if (version_ == 0 || version_ > max_version) {
    throw IoError(path.string() + ": unsupported container version " + std::to_string(version_));
  }
}

void BinaryReader::expect_available(std::uint64_t count, std::uint64_t width) {
  const auto pos = static_cast<std::uint64_t>(in_.tellg());
  const std::uint64_t left = size_ > pos ? size_ - pos : 0;
  if (width != 0 && count > left / width) throw IoError(path_.string() + ": truncated container");
}

void BinaryReader::raw(void* data, std::size_t bytes) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in_.gcount()) != bytes) throw IoError(path_.string() + ": truncated container");
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}

void BinaryReader::expect_end() {
  if (in_.peek() != std::char_traits<char>::eof()) throw IoError(path_.string() + ": trailing bytes in container");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write to " + path.string() + " failed");
}

}  // namespace ntrflab
