#pragma once

#include "elvis/encoders.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace elvis {

/// Half-open rectangle in grid coordinates.
struct GridBox {
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;
  std::string label;

  bool contains_cell(int r, int c) const { return r >= row0 && r < row1 && c >= col0 && c < col1; }
  int cells() const { return (row1 - row0) * (col1 - col0); }
  bool operator==(const GridBox&) const = default;
};

/// A finding category: how it looks (alternative per-channel signatures) and its name in text.
struct FindingType {
  std::string name;
  std::vector<std::vector<int>> appearances;  // each: 0/1 flag per channel

  bool operator==(const FindingType&) const = default;
};

struct SyntheticWorldConfig {
  int grid = 7;
  int image_size = 56;
  int channels = 3;
  std::array<int, 2> roi_count_range{1, 3};
  std::array<int, 2> roi_size_range{1, 3};  // side length in cells
  std::vector<FindingType> findings = default_findings();
  double duplicate_sentence_prob = 0.3;
  double bilateral_prob = 0.2;
  std::array<int, 2> filler_range{1, 3};
  int max_sentences = 8;
  std::uint64_t seed = 0;

  /// Four finding types on three channels. Each type shows one of two colour
  /// signatures whose union is not linearly separable from the other types.
  static std::vector<FindingType> default_findings();
  void validate() const;
  GridShape grid_shape() const { return {grid, grid}; }
  bool operator==(const SyntheticWorldConfig&) const = default;
};

void to_json(nlohmann::json& j, const SyntheticWorldConfig& c);
void from_json(const nlohmann::json& j, SyntheticWorldConfig& c);

struct AlignedSample {
  std::string id;
  ImageTensor image;
  Report report;
  std::vector<GridBox> boxes;
  /// For every sentence, the indices of the boxes it describes (empty for filler).
  std::vector<std::vector<int>> sentence_boxes;
  GridShape grid;

  /// sentences x cells; true where a sentence describes that cell.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> gt_alignment() const;

  bool operator==(const AlignedSample&) const = default;
};

/// Deterministic in (cfg, index).
AlignedSample generate_sample(const SyntheticWorldConfig& cfg, std::uint64_t index);
std::vector<AlignedSample> generate_samples(const SyntheticWorldConfig& cfg, std::uint64_t first, std::size_t count);

/// Pixel-resolution mask of every box whose label is in `labels` (all boxes when empty).
Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> pixel_mask(const AlignedSample& s,
                                                             const std::vector<std::string>& labels = {});

struct Dataset {
  GridShape grid;
  std::vector<AlignedSample> samples;
  std::optional<SyntheticWorldConfig> world;
};

/// Layout: manifest.json, images/<id>.f32, reports/<id>.txt, boxes/<id>.csv.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

std::string boxes_to_csv(const std::vector<GridBox>& boxes);
std::vector<GridBox> boxes_from_csv(const std::string& text, const std::string& what);

/// Precomputed local embeddings from an external backbone.
struct ExternalFeatures {
  std::vector<std::string> ids;
  std::vector<LocalEmbeddings<double>> image;
  std::vector<LocalEmbeddings<double>> text;
};

/// Reads manifest.json and features/<id>.img.f32 (rows, cols, D) plus
/// features/<id>.txt.f32 (sentences, D, 1) for every listed id.
ExternalFeatures load_external_features(const std::filesystem::path& dir);
void write_external_features(const std::filesystem::path& dir, const ExternalFeatures& features);

}  // namespace elvis
