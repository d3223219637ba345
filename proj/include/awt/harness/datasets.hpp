#pragma once

// MNIST IDX ingestion, seeded subsets, and small synthetic datasets.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "awt/data.hpp"
#include "awt/harness/errors.hpp"

namespace awt::harness {

struct LabelledImages {
  Matrix inputs;            // N x (rows * cols), pixels / 255
  std::vector<int> labels;  // N
};

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const std::string& field) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(field + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

inline std::ifstream open_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return is;
}

}  // namespace detail

/// Images: magic 2051, then N, rows, cols (big-endian u32) and N*rows*cols
/// bytes. Labels: magic 2049, then N and N bytes.
inline LabelledImages load_mnist_idx(const std::string& images_path,
                                     const std::string& labels_path) {
  auto img = detail::open_binary(images_path);
  if (const auto magic = detail::read_be32(img, "images magic"); magic != 2051)
    throw FormatError("images magic: bad magic " + std::to_string(magic) + " (expected 2051)");
  const std::uint32_t n = detail::read_be32(img, "images count");
  const std::uint32_t rows = detail::read_be32(img, "images rows");
  const std::uint32_t cols = detail::read_be32(img, "images cols");

  auto lab = detail::open_binary(labels_path);
  if (const auto magic = detail::read_be32(lab, "labels magic"); magic != 2049)
    throw FormatError("labels magic: bad magic " + std::to_string(magic) + " (expected 2049)");
  const std::uint32_t nl = detail::read_be32(lab, "labels count");
  if (nl != n)
    throw FormatError("labels count: " + std::to_string(nl) + " does not match images count " +
                      std::to_string(n));

  const std::size_t d = std::size_t{rows} * cols;
  std::vector<unsigned char> pix(std::size_t{n} * d);
  if (!img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size())))
    throw FormatError("images payload: truncated");
  std::vector<unsigned char> lb(n);
  if (!lab.read(reinterpret_cast<char*>(lb.data()), static_cast<std::streamsize>(lb.size())))
    throw FormatError("labels payload: truncated");

  LabelledImages out{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)),
                     std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      out.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<double>(pix[i * d + j]) / 255.0;
    out.labels[i] = lb[i];
  }
  return out;
}

inline Dataset to_classification(const LabelledImages& li, std::size_t classes) {
  return Dataset{li.inputs, one_hot(li.labels, classes), li.labels};
}

/// Disjoint train and test index sets drawn from one seeded permutation of
/// 0..total-1; the result depends only on (total, seed, sizes).
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline SplitIndices seeded_split(std::size_t total, std::size_t train_size, std::size_t test_size,
                                 std::uint64_t seed) {
  if (train_size + test_size > total)
    throw ConfigError("data: train_size + test_size = " + std::to_string(train_size + test_size) +
                      " exceeds the " + std::to_string(total) + " available examples");
  Rng rng(seed, 0x73706c);
  const auto perm = permutation(total, rng);
  SplitIndices s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(train_size));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(train_size),
                perm.begin() + static_cast<std::ptrdiff_t>(train_size + test_size));
  return s;
}

/// `classes` isotropic blobs with centres on a circle inside [0,1]^2.
inline Dataset make_blobs(std::size_t n, std::size_t classes, double spread, Rng& rng) {
  if (classes < 2) throw ConfigError("data.classes must be >= 2");
  Dataset d{Matrix(static_cast<Eigen::Index>(n), 2), Matrix(), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<int>(i % classes);
    const double a = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(classes);
    const auto r = static_cast<Eigen::Index>(i);
    d.inputs(r, 0) = 0.5 + 0.3 * std::cos(a) + spread * rng.normal();
    d.inputs(r, 1) = 0.5 + 0.3 * std::sin(a) + spread * rng.normal();
    d.labels[i] = c;
  }
  d.targets = one_hot(d.labels, classes);
  return d;
}

/// The four XOR corners repeated `copies` times; single signed target.
inline Dataset make_xor(std::size_t copies) {
  const double X[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  const int L[4] = {0, 1, 1, 0};
  const auto n = static_cast<Eigen::Index>(4 * copies);
  Dataset d{Matrix(n, 2), Matrix(n, 1), std::vector<int>(4 * copies)};
  for (Eigen::Index i = 0; i < n; ++i) {
    d.inputs(i, 0) = X[i % 4][0];
    d.inputs(i, 1) = X[i % 4][1];
    d.labels[static_cast<std::size_t>(i)] = L[i % 4];
    d.targets(i, 0) = L[i % 4] ? 1.0 : -1.0;
  }
  return d;
}

}  // namespace awt::harness
