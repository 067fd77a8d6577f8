#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedmil/bag_io.hpp"
#include "fedmil/dataset.hpp"
#include "fedmil/errors.hpp"

namespace fedmil {

namespace detail {

inline std::uint32_t read_be32(const std::string& in, std::size_t& pos,
                               const std::string& what) {
  require(pos + 4 <= in.size(), ErrorCode::truncated, what + ": header truncated");
  auto b = [&](std::size_t i) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i]));
  };
  std::uint32_t v = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
  pos += 4;
  return v;
}

// LeCun's files use dashes, the Kaggle mirror uses a dot before "idx".
inline std::filesystem::path resolve_idx(const std::filesystem::path& dir,
                                         const std::string& stem,
                                         const std::string& ext) {
  auto dashed = dir / (stem + "-" + ext);
  if (std::filesystem::exists(dashed)) return dashed;
  auto dotted = dir / (stem + "." + ext);
  if (std::filesystem::exists(dotted)) return dotted;
  return dashed; // read_file will raise missing_file with this name
}

} // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Parses one images + labels file pair into single-instance bags
// (d = rows*cols, pixels scaled to [0,1], bag id = sample index).
inline BagDataset load_idx_pair(const std::filesystem::path& images_path,
                                const std::filesystem::path& labels_path,
                                Split split) {
  const std::string img = detail::read_file(images_path);
  const std::string lab = detail::read_file(labels_path);

  std::size_t ipos = 0;
  std::uint32_t magic = detail::read_be32(img, ipos, images_path.string());
  require(magic == kIdxImagesMagic, ErrorCode::magic_mismatch,
          images_path.string() + ": expected images magic 0x803, got " +
              std::to_string(magic));
  std::uint32_t n = detail::read_be32(img, ipos, images_path.string());
  std::uint32_t rows = detail::read_be32(img, ipos, images_path.string());
  std::uint32_t cols = detail::read_be32(img, ipos, images_path.string());

  std::size_t lpos = 0;
  std::uint32_t lmagic = detail::read_be32(lab, lpos, labels_path.string());
  require(lmagic == kIdxLabelsMagic, ErrorCode::magic_mismatch,
          labels_path.string() + ": expected labels magic 0x801, got " +
              std::to_string(lmagic));
  std::uint32_t ln = detail::read_be32(lab, lpos, labels_path.string());
  require(ln == n, ErrorCode::count_mismatch,
          "image count " + std::to_string(n) + " != label count " + std::to_string(ln));

  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  require(img.size() - ipos >= static_cast<std::size_t>(n) * d, ErrorCode::truncated,
          images_path.string() + ": pixel payload truncated");
  require(lab.size() - lpos >= n, ErrorCode::truncated,
          labels_path.string() + ": label payload truncated");

  BagDataset ds;
  ds.feature_dim = static_cast<int>(d);
  ds.num_classes = 10;
  ds.split = split;
  ds.bags.resize(n);
  constexpr float kScale = 1.0f / 255.0f;
  for (std::uint32_t i = 0; i < n; ++i) {
    Bag& b = ds.bags[i];
    b.id = static_cast<std::int64_t>(i);
    b.label = static_cast<unsigned char>(lab[lpos + i]);
    require(b.label < 10, ErrorCode::config,
            labels_path.string() + ": label out of range at sample " + std::to_string(i));
    b.num_instances = 1;
    b.features.resize(d);
    const unsigned char* px =
        reinterpret_cast<const unsigned char*>(img.data()) + ipos + static_cast<std::size_t>(i) * d;
    for (std::size_t j = 0; j < d; ++j) b.features[j] = kScale * px[j];
  }
  return ds;
}

struct MnistData {
  BagDataset train;
  BagDataset test;
};

// Loads the four standard IDX files found under `dir`.
inline MnistData load_mnist(const std::filesystem::path& dir) {
  MnistData out;
  out.train = load_idx_pair(detail::resolve_idx(dir, "train-images", "idx3-ubyte"),
                            detail::resolve_idx(dir, "train-labels", "idx1-ubyte"),
                            Split::train);
  out.test = load_idx_pair(detail::resolve_idx(dir, "t10k-images", "idx3-ubyte"),
                           detail::resolve_idx(dir, "t10k-labels", "idx1-ubyte"),
                           Split::test);
  return out;
}

} // namespace fedmil
