#pragma once

// Little-endian primitive encoding used by the feature-matrix and
// checkpoint formats. The host is assumed little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "sheet/common.hpp"

namespace sheet::bin {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string origin) : data_(data), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(bytes(get<std::uint32_t>())); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(origin_ + ": truncated data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace sheet::bin
