#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bpct/error.hpp"

namespace bpct::bytes {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class Writer {
 public:
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(v); }
  void f32s(std::span<const float> v) {
    const auto* p = reinterpret_cast<const char*>(v.data());
    buf_.insert(buf_.end(), p, p + v.size_bytes());
  }

  const std::vector<char>& data() const { return buf_; }

  void save(const std::filesystem::path& path) const;

 private:
  template <typename T>
  void put(T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf_.insert(buf_.end(), tmp, tmp + sizeof(T));
  }
  std::vector<char> buf_;
};

inline void write_file(const std::filesystem::path& path, std::span<const char> buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void Writer::save(const std::filesystem::path& path) const { write_file(path, buf_); }

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

class Reader {
 public:
  Reader(std::span<const char> buf, std::string where) : buf_(buf), where_(std::move(where)) {}

  bool expect(std::string_view magic) {
    if (buf_.size() - pos_ < magic.size()) return false;
    const bool ok = std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) == 0;
    pos_ += magic.size();
    return ok;
  }
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void f32s(std::span<float> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), buf_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& where() const { return where_; }

  void finish() const {
    if (remaining() != 0) throw FormatError(FormatErrc::TrailingBytes, where_);
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError(FormatErrc::Truncated, where_);
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const char> buf_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace bpct::bytes
