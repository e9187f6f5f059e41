#pragma once

// Versioned binary container for checkpoints and buffer snapshots.
//
// Layout (little-endian, as written by the host):
//   magic   8 bytes  "BEXCKPT\0"
//   version u32      kContainerVersion
//   kind    string   what the payload holds ("agent", "ensemble", "replay", ...)
//   payload          sequence of tagged records written by the owning type
//
// Strings are u64 length + bytes. Real arrays are u64 count + f64 values.
// Every record begins with a string tag that the reader checks, so a payload
// written by one type cannot be silently read back as another.

#include "bex/common.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string_view>

namespace bex {

inline constexpr std::array<char, 8> kContainerMagic{'B', 'E', 'X', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void header(std::string_view kind) {
    out_.write(kContainerMagic.data(), kContainerMagic.size());
    u32(kContainerVersion);
    str(kind);
  }

  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }

  void str(std::string_view s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void reals(std::span<const double> values) {
    u64(values.size());
    raw(values.data(), values.size() * sizeof(double));
  }

  void tag(std::string_view t) { str(t); }

  void check() const {
    if (!out_) throw FormatError("write failed");
  }

 private:
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  /// Validates magic and version; returns the payload kind.
  std::string header() {
    std::array<char, 8> magic{};
    in_.read(magic.data(), magic.size());
    if (!in_ || magic != kContainerMagic) throw FormatError("not a bex container (bad magic)");
    const auto version = u32();
    if (version != kContainerVersion)
      throw FormatError("unsupported container version " + std::to_string(version));
    return str();
  }

  void expect_header(std::string_view kind) {
    const auto got = header();
    if (got != kind) throw FormatError("container holds '" + got + "', expected '" + std::string(kind) + "'");
  }

  std::uint32_t u32() {
    std::uint32_t v{};
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v{};
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v{};
    raw(&v, sizeof v);
    return v;
  }

  std::string str() {
    const auto n = u64();
    if (n > (1u << 20)) throw FormatError("string record too long");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  std::vector<double> reals() {
    const auto n = u64();
    if (n > (1ull << 32)) throw FormatError("array record too long");
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }

  void expect_tag(std::string_view t) {
    const auto got = str();
    if (got != t) throw FormatError("expected record '" + std::string(t) + "', found '" + got + "'");
  }

 private:
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("truncated container");
  }
  std::istream& in_;
};

}  // namespace bex
