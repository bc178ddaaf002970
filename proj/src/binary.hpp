#pragma once

// Little-endian byte buffers for the .tmfd and TMCK formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "tmf/error.hpp"

namespace tmf::binary {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  template <typename T>
  void put_array(std::span<const T> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string16(const std::string& s) {
    require(s.size() <= 0xffff, ErrorCode::Parameter, "string too long for u16 length prefix");
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    put_bytes(s.data(), s.size());
  }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }
  template <typename T>
  void get_array(std::span<T> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + offset_, out.size_bytes());
    offset_ += out.size_bytes();
  }
  std::string get_string16() {
    const auto n = get<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), n);
    offset_ += n;
    return s;
  }
  void expect_magic(const char (&magic)[5]) {
    need(4);
    if (std::memcmp(bytes_.data() + offset_, magic, 4) != 0) {
      fail(ErrorCode::Format, what_ + ": bad magic at byte offset 0, expected \"" + std::string(magic) + "\"");
    }
    offset_ += 4;
  }
  void expect_end() const {
    if (offset_ != bytes_.size()) {
      fail(ErrorCode::Format, what_ + ": trailing bytes at byte offset " + std::to_string(offset_));
    }
  }
  // Bytes left, for sanity-checking counts before allocating.
  std::size_t remaining() const { return bytes_.size() - offset_; }
  std::size_t offset() const { return offset_; }
  // Fails with the truncation message unless n more bytes are present.
  void require_available(std::size_t n) const { need(n); }
  [[noreturn]] void invalid(const std::string& message) const {
    fail(ErrorCode::Format, what_ + ": " + message + " at byte offset " + std::to_string(offset_));
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - offset_ < n) {
      fail(ErrorCode::Format, what_ + ": truncated payload at byte offset " + std::to_string(offset_) +
                                  " (needed " + std::to_string(n) + " more bytes, " +
                                  std::to_string(bytes_.size() - offset_) + " available)");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t offset_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace tmf::binary
