#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedmil/dataset.hpp"
#include "fedmil/errors.hpp"

namespace fedmil {

// "FBAG" container, little-endian throughout:
//   magic "FBAG" | u32 version | u64 num_bags | u32 feature_dim
//   | u32 num_classes | u8 split | u32 crc32(payload)
// payload = per-bag records: i64 bag_id | i32 label | u32 n | n*d f32.
inline constexpr std::uint32_t kFbagVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "FBAG/model blob writers assume a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos, ErrorCode code, const std::string& what) {
  require(pos + sizeof(T) <= in.size(), code, what);
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::missing_file, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorCode::missing_file, "cannot open " + path.string() + " for write");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorCode::missing_file, "write failed: " + path.string());
}

inline std::uint32_t payload_crc(const std::string& s, std::size_t offset) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(s.data() + offset),
              static_cast<uInt>(s.size() - offset)));
}

} // namespace detail

inline constexpr std::size_t kFbagHeaderSize = 4 + 4 + 8 + 4 + 4 + 1 + 4;

inline void save_bags(const BagDataset& ds, const std::filesystem::path& path) {
  std::string out;
  out.append("FBAG", 4);
  detail::put<std::uint32_t>(out, kFbagVersion);
  detail::put<std::uint64_t>(out, ds.bags.size());
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.feature_dim));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_classes));
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(ds.split));
  detail::put<std::uint32_t>(out, 0); // crc placeholder

  for (const Bag& b : ds.bags) {
    detail::put<std::int64_t>(out, b.id);
    detail::put<std::int32_t>(out, b.label);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(b.num_instances));
    const std::size_t n = out.size();
    out.resize(n + b.features.size() * sizeof(float));
    std::memcpy(out.data() + n, b.features.data(), b.features.size() * sizeof(float));
  }

  std::uint32_t crc = detail::payload_crc(out, kFbagHeaderSize);
  std::memcpy(out.data() + kFbagHeaderSize - 4, &crc, 4);
  detail::write_file(path, out);
}

inline BagDataset load_bags(const std::filesystem::path& path) {
  const std::string in = detail::read_file(path);
  std::size_t pos = 0;
  require(in.size() >= kFbagHeaderSize, ErrorCode::truncated, "FBAG header truncated");
  require(in.compare(0, 4, "FBAG") == 0, ErrorCode::magic_mismatch,
          "not an FBAG file: " + path.string());
  pos = 4;
  auto version = detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "header");
  require(version == kFbagVersion, ErrorCode::version_mismatch,
          "FBAG version " + std::to_string(version) + " unsupported");
  auto num_bags = detail::get<std::uint64_t>(in, pos, ErrorCode::truncated, "header");
  auto feature_dim = detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "header");
  auto num_classes = detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "header");
  auto split = detail::get<std::uint8_t>(in, pos, ErrorCode::truncated, "header");
  auto stored_crc = detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "header");

  BagDataset ds;
  ds.feature_dim = static_cast<int>(feature_dim);
  ds.num_classes = static_cast<int>(num_classes);
  ds.split = static_cast<Split>(split);
  ds.bags.resize(num_bags);
  for (std::uint64_t i = 0; i < num_bags; ++i) {
    const std::string where = "FBAG truncated in bag " + std::to_string(i);
    Bag& b = ds.bags[i];
    b.id = detail::get<std::int64_t>(in, pos, ErrorCode::truncated, where);
    b.label = detail::get<std::int32_t>(in, pos, ErrorCode::truncated, where);
    b.num_instances = static_cast<int>(
        detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, where));
    const std::size_t count =
        static_cast<std::size_t>(b.num_instances) * feature_dim;
    require(pos + count * sizeof(float) <= in.size(), ErrorCode::truncated, where);
    b.features.resize(count);
    std::memcpy(b.features.data(), in.data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
  }
  require(pos == in.size(), ErrorCode::length_mismatch,
          "FBAG has trailing bytes after last bag");
  // Checked last so truncation reports the offending bag, not a bad crc.
  require(stored_crc == detail::payload_crc(in, kFbagHeaderSize),
          ErrorCode::checksum_mismatch, "FBAG payload checksum mismatch");
  return ds;
}

} // namespace fedmil
