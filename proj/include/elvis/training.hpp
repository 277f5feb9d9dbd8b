#pragma once

#include "elvis/config.hpp"
#include "elvis/model.hpp"
#include "elvis/objectives.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace elvis {

struct AugmentConfig {
  bool enabled = true;
  std::array<double, 2> rotation_degrees{-20.0, 20.0};
  std::array<double, 2> scaling{0.95, 1.05};
  std::array<double, 2> color_jitter{0.6, 1.4};  // brightness and contrast factors
  double horizontal_flip_prob = 0.5;
  std::array<double, 2> random_crop_scale{0.6, 1.0};  // kept area fraction
  std::array<double, 2> gaussian_blur_sigma{0.1, 3.0};  // pixels

  /// Every range collapsed to its no-op value.
  static AugmentConfig identity();
  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

/// Rotation, scaling, colour jitter, horizontal flip, crop-and-resize, blur, in
/// that order, then clipping to [0, 1]. Draws the same number of values from
/// `rng` whatever the configuration.
ImageTensor augment(const ImageTensor& image, const AugmentConfig& cfg, std::mt19937_64& rng);

enum class Schedule { Cosine, Plateau, Step };

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-4;
  Schedule schedule = Schedule::Cosine;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool early_stop = false;
  int early_stop_patience = 10;
  double validation_fraction = 0.1;
  int grad_accumulation = 1;
  std::vector<double> step_milestones{30, 40};  // epochs
  double step_gamma = 0.1;
  int plateau_patience = 5;
  double plateau_factor = 0.1;
  AugmentConfig augmentation;
  LossConfig loss;

  void validate() const;
};

void read_config(KeyValues& kv, TrainConfig& cfg);
void write_config(KeyValues& kv, const TrainConfig& cfg);
void read_config(KeyValues& kv, ModelConfig& cfg);
void write_config(KeyValues& kv, const ModelConfig& cfg);

/// Hash of the canonical key=value dump of both configs.
std::string config_hash(const TrainConfig& train, const ModelConfig& model);

/// One training pair. Synthetic pairs keep their image so it can be augmented;
/// external-feature pairs carry precomputed locals only.
struct TrainExample {
  std::string id;
  std::optional<ImageTensor> image;
  PairInput input;
};

std::vector<TrainExample> make_examples(const std::vector<AlignedSample>& samples, const ModelConfig& cfg);
std::vector<TrainExample> make_examples(const ExternalFeatures& features, const ModelConfig& cfg);

/// True for ids in the validation split (a fixed fraction chosen by id hash).
bool in_validation_split(const std::string& id, double fraction);

/// Loss of one batch through the inference path (no tape).
LossBundle forward_batch(const ElvisModel& model, const std::vector<PairInput>& batch, const LossConfig& cfg);

struct BatchNodes {
  std::array<ag::Var, 4> components;
  ag::Var total;
  LossBundle values() const;
};

/// Records the batch loss on `tape`; encoders and heads run once over the stacked batch.
BatchNodes record_batch(ag::Tape& tape, ElvisModel& model, const std::vector<const PairInput*>& batch,
                        const LossConfig& cfg);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Eigen::MatrixXd> m, v;
};

/// One Adam update from the gradients held in the model's parameters. Moments
/// and parameters are stored back at float32 precision.
void adam_step(ElvisModel& model, AdamState& state, double lr);

struct SchedulerState {
  double scale = 1.0;  // plateau multiplier
  double best = 0.0;
  bool has_best = false;
  int bad_epochs = 0;
  int stale_epochs = 0;  // early stopping
  double best_validation = 0.0;
  bool has_best_validation = false;
};

/// Learning rate at optimizer step `step` (0-based) of `total_steps`, during `epoch`.
double learning_rate(const TrainConfig& cfg, const SchedulerState& sched, std::int64_t step,
                     std::int64_t total_steps, int epoch);

struct EpochMetrics {
  int epoch = 0;
  LossBundle train;
  std::optional<double> validation_total;
  double lr = 0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& history);

struct Checkpoint {
  explicit Checkpoint(ElvisModel m) : model(std::move(m)) {}

  ElvisModel model;
  AdamState adam;
  SchedulerState scheduler;
  int epochs_done = 0;
  std::vector<EpochMetrics> history;
  std::string config_hash;
  KeyValues config;
};

std::string encode_checkpoint(const Checkpoint& ckp);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckp);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainOptions {
  int workers = 1;
  /// When set, metrics.csv and checkpoint.bin are rewritten after every epoch.
  std::optional<std::filesystem::path> out_dir;
  std::optional<Checkpoint> resume;
  /// Stop after this many completed epochs (for interrupted-run tests).
  std::optional<int> stop_after;
  std::function<void(const EpochMetrics&)> on_epoch;
};

Checkpoint train(const std::vector<TrainExample>& examples, const TrainConfig& cfg, const ModelConfig& model_cfg,
                 const TrainOptions& options = {});

}  // namespace elvis
