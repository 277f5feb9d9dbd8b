#pragma once

#include "elvis/core/linear.hpp"
#include "elvis/core/types.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace elvis {

/// Channel-major image, values nominally in [0, 1].
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  bool operator==(const ImageTensor&) const = default;
};

struct Report {
  std::string raw_text;
  std::vector<std::string> sentences;

  bool operator==(const Report&) const = default;
};

/// Splits on '.', '!' or '?' when followed by whitespace or the end of text.
/// Decimal numbers and a few common abbreviations never end a sentence.
/// Throws ContractError when nothing but whitespace/punctuation remains.
std::vector<std::string> split_sentences(std::string_view raw_text);

Report make_report(std::string raw_text);

/// Lower-cased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view sentence);

/// 64-bit FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t fnv1a(std::string_view text);

/// Per-channel mean of every patch of a rows x cols grid; row r*cols + c is cell (r, c).
Eigen::MatrixXd patch_features(const ImageTensor& image, GridShape grid);

/// One L2-normalized bag-of-token-hashes row per sentence; rows beyond the
/// sentence count (up to max_sentences) are zero padding.
Eigen::MatrixXd sentence_features(const std::vector<std::string>& sentences, int hash_dim, int max_sentences);

/// Two-layer map: tanh(x * W1 + b1) * W2 + b2.
template <typename Scalar>
struct ToyEncoder {
  Linear<Scalar> first;
  Linear<Scalar> second;

  template <typename Rng>
  static ToyEncoder init(Index in, Index hidden, Index out, Rng& rng) {
    return {Linear<Scalar>::fan_in_uniform(in, hidden, rng), Linear<Scalar>::fan_in_uniform(hidden, out, rng)};
  }

  template <typename Derived>
  Matrix<Scalar> operator()(const Eigen::MatrixBase<Derived>& x) const {
    const Matrix<Scalar> h = first(x).array().tanh().matrix();
    return second(h);
  }
};

LocalEmbeddings<double> encode_image_toy(const ImageTensor& image, GridShape grid, const ToyEncoder<double>& encoder);

LocalEmbeddings<double> encode_text_toy(const Report& report, int hash_dim, int max_sentences,
                                        const ToyEncoder<double>& encoder);

}  // namespace elvis
