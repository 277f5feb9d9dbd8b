#pragma once

#include "elvis/autograd.hpp"
#include "elvis/core/pooling.hpp"
#include "elvis/core/projection.hpp"
#include "elvis/encoders.hpp"
#include "elvis/synthetic.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <string>

namespace elvis {

struct ModelConfig {
  int grid = 7;
  int channels = 3;
  int hash_dim = 256;
  int max_sentences = 8;
  int hidden = 32;
  int image_dim = 64;
  int text_dim = 64;
  int joint_dim = 32;
  int pool_key_dim = 32;
  CrossWeights cross_weights = CrossWeights::Cosine;
  /// Locals come precomputed from an external backbone; the toy encoders are unused.
  bool external_features = false;

  GridShape grid_shape() const { return {grid, grid}; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// One image/report pair as encoder inputs: patch features (cells x channels) and
/// sentence features (sentences x hash_dim), or precomputed locals y_l when the
/// model uses external features.
struct PairInput {
  Eigen::MatrixXd image;
  Eigen::MatrixXd text;
};

PairInput make_input(const AlignedSample& sample, const ModelConfig& cfg);
PairInput make_input(const ImageTensor& image, const Report& report, const ModelConfig& cfg);

struct PairEmbeddings {
  LocalEmbeddings<double> image_local;  // y_l^I
  LocalEmbeddings<double> text_local;   // y_l^T
  GlobalEmbedding<double> image_global;  // y_g^I
  GlobalEmbedding<double> text_global;   // y_g^T
  LocalEmbeddings<double> image_joint;  // z_l^I
  LocalEmbeddings<double> text_joint;   // z_l^T
  GlobalEmbedding<double> image_global_joint;  // z_g^I
  GlobalEmbedding<double> text_global_joint;   // z_g^T
};

/// All trainable tensors, in a fixed order, stored at float32 precision.
class ElvisModel {
 public:
  static ElvisModel init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::deque<ag::Parameter>& parameters() { return params_; }
  const std::deque<ag::Parameter>& parameters() const { return params_; }
  ag::Parameter& param(const std::string& name);
  const ag::Parameter& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t parameter_count() const;

  Linear<double> linear(const std::string& prefix) const;
  ToyEncoder<double> encoder(Modality m) const;
  AttentionPoolParams<double> pool(Modality m) const;
  ProjectionHead<double> head(Modality m) const;

  /// Inference through the core functions (no tape).
  PairEmbeddings embed(const PairInput& input) const;
  LocalEmbeddings<double> image_locals(const Eigen::MatrixXd& patches) const;
  LocalEmbeddings<double> text_locals(const Eigen::MatrixXd& sentences) const;

  void round_to_float();

 private:
  ElvisModel() = default;
  void add(std::string name, Eigen::MatrixXd value);

  ModelConfig cfg_;
  std::deque<ag::Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

std::string prefix(Modality m);

/// Graph counterparts of the model's building blocks.
namespace graph {

struct PairNodes {
  ag::Var image_local, text_local;
  ag::Var image_joint, text_joint;
  ag::Var image_global_joint, text_global_joint;
  ag::Var image_cross, text_cross;  // z^{I|T}, z^{T|I}
};

ag::Var linear(ag::Tape& tape, ElvisModel& model, const std::string& prefix, const ag::Var& x);
ag::Var encode(ag::Tape& tape, ElvisModel& model, Modality m, const ag::Var& features);
ag::Var attention_pool(ag::Tape& tape, ElvisModel& model, Modality m, const ag::Var& locals);
ag::Var cross_attend(ag::Tape& tape, ElvisModel& model, const ag::Var& z, const ag::Var& other, Modality other_modality);

PairNodes forward_pair(ag::Tape& tape, ElvisModel& model, const PairInput& input);

}  // namespace graph

}  // namespace elvis
