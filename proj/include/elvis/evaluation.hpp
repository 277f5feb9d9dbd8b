#pragma once

#include "elvis/config.hpp"
#include "elvis/model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace elvis {

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Per-cell cosine similarity between a query and every image local, shaped to the grid.
SimilarityMatrix<double> similarity_map(const Eigen::VectorXd& query, const LocalEmbeddings<double>& image_locals);

/// Cells whose centre lies inside any of `boxes`.
BoolGrid interior_cells(GridShape grid, const std::vector<GridBox>& boxes);

struct CnrResult {
  double non_absolute = 0;
  double absolute = 0;
  Index n_in = 0, n_out = 0;
  double mu_in = 0, mu_out = 0;
  double var_in = 0, var_out = 0;  // population variances
};

inline constexpr double kCnrEpsilon = 1e-8;

/// (mu_in - mu_out) / (sqrt(var_in + var_out) + eps). Throws ContractError when
/// the boxes leave no interior or no exterior cell.
CnrResult cnr(const Eigen::MatrixXd& map, const std::vector<GridBox>& boxes);

struct GroundingCase {
  std::string id;
  LocalEmbeddings<double> image;  // z_l^I
  Eigen::VectorXd query;          // z_l^T of the query phrase
  std::vector<GridBox> boxes;
  std::string label;
  int gt_box_count = 0;
};

/// Embeds `query` as a one-sentence report and the image through the model.
GroundingCase make_grounding_case(const ElvisModel& model, const std::string& id, const ImageTensor& image,
                                  const std::string& query, std::vector<GridBox> boxes);

/// One case per sample: the first sentence that describes boxes, grounded on those boxes.
std::vector<GroundingCase> grounding_cases(const ElvisModel& model, const std::vector<AlignedSample>& samples);

struct ReportRow {
  std::string group;
  std::string metric;
  double value = 0;
  std::size_t n = 0;
};

struct GroundingReport {
  std::vector<ReportRow> rows;
  std::size_t excluded = 0;
  std::vector<std::string> exclusion_reasons;
  std::vector<CnrResult> per_case;  // in input order, excluded cases omitted

  /// Value of (group, metric); throws ContractError when absent.
  double value(const std::string& group, const std::string& metric) const;
  /// group,metric,value,n
  std::string csv() const;
};

/// Mean non-absolute and absolute CNR over all cases (Avg), by ground-truth box
/// count (Single, Multiple) and by finding label (finding:<label>, sorted).
GroundingReport grounding_report(const std::vector<GroundingCase>& cases);

/// Dice of two equal-shaped masks; two empty masks score 1.
double dice(const BoolGrid& a, const BoolGrid& b);

struct ProbeConfig {
  double learning_rate = 1e-2;
  int epochs = 50;
  int batch_size = 64;  // images per step
  std::string label = "opacity";
  std::uint64_t seed = 0;

  void validate() const;
};

void read_config(KeyValues& kv, ProbeConfig& cfg);
void write_config(KeyValues& kv, const ProbeConfig& cfg);

/// Affine map from one cell's z_l^I to a foreground logit.
struct LinearProbe {
  Eigen::VectorXd weight;
  double bias = 0;
};

/// Frozen features for the probe: z_l^I of the sample.
Eigen::MatrixXd probe_features(const ElvisModel& model, const ImageTensor& image);

/// 1 for cells whose centre lies in a box labelled `label`.
Eigen::VectorXd cell_targets(const AlignedSample& sample, const std::string& label);

/// Trains only the probe with cell-wise binary cross-entropy; the model is read-only.
LinearProbe linear_probe_train(const ElvisModel& model, const std::vector<AlignedSample>& samples,
                               const ProbeConfig& cfg);

/// Logit > 0 per cell, upsampled to image size by nearest neighbour.
BoolGrid predict_mask(const ElvisModel& model, const LinearProbe& probe, const AlignedSample& sample);

struct SegmentationResult {
  double mean_dice = 0;  // per-image mean
  double pooled_dice = 0;  // all pixels of all images at once
  std::size_t images = 0;
};

SegmentationResult evaluate_segmentation(const ElvisModel& model, const LinearProbe& probe,
                                         const std::vector<AlignedSample>& samples, const std::string& label);

/// Mean over images of the upper-triangle Pearson correlation between cos(y_l^I)
/// and cos(z_l^I).
double intra_modal_preservation(const ElvisModel& model, const std::vector<AlignedSample>& samples);

struct MeanCi {
  double mean = 0;
  double half_width = 0;  // 1.96 * sd / sqrt(n)
  std::size_t n = 0;
};

MeanCi mean_ci(const std::vector<double>& values);

struct HeatmapOptions {
  bool write_csv = true;
  /// Bilinear resize to (rows, cols) before normalisation, for overlays.
  std::optional<std::pair<int, int>> upsample;
};

struct HeatmapFiles {
  std::filesystem::path pgm, csv, sidecar;
};

/// Writes <path> as 8-bit PGM after min-max normalisation (a constant map is mid
/// grey), <path stem>.csv with the raw values and <path stem>.txt with min, max
/// and a constant flag.
HeatmapFiles export_heatmap(const Eigen::MatrixXd& map, const std::filesystem::path& path,
                            const HeatmapOptions& options = {});

Eigen::MatrixXd read_heatmap_csv(const std::filesystem::path& path);

/// 8-bit grey levels of the min-max normalised map.
Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> heatmap_levels(const Eigen::MatrixXd& map);

Eigen::MatrixXd bilinear_resize(const Eigen::MatrixXd& map, int rows, int cols);

}  // namespace elvis
