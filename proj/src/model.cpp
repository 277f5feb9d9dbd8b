#include "elvis/model.hpp"

#include <cmath>
#include <random>

namespace elvis {

void ModelConfig::validate() const {
  require(grid >= 1, "model.grid must be positive");
  require(channels >= 1, "model.channels must be positive");
  require(hash_dim >= 1, "model.hash_dim must be positive");
  require(max_sentences >= 1, "model.max_sentences must be positive");
  require(hidden >= 1 && image_dim >= 1 && text_dim >= 1, "model dimensions must be positive");
  require(joint_dim >= 1 && pool_key_dim >= 1, "model.joint_dim and model.pool_key_dim must be positive");
}

std::string prefix(Modality m) { return m == Modality::Image ? "image" : "text"; }

PairInput make_input(const ImageTensor& image, const Report& report, const ModelConfig& cfg) {
  PairInput in;
  in.image = patch_features(image, cfg.grid_shape());
  require(in.image.cols() == cfg.channels, "make_input: image channel count differs from model.channels");
  in.text = sentence_features(report.sentences, cfg.hash_dim, static_cast<int>(report.sentences.size()));
  return in;
}

PairInput make_input(const AlignedSample& sample, const ModelConfig& cfg) {
  require(static_cast<int>(sample.report.sentences.size()) <= cfg.max_sentences,
          "sample " + sample.id + ": more sentences than model.max_sentences");
  return make_input(sample.image, sample.report, cfg);
}

void ElvisModel::add(std::string name, Eigen::MatrixXd value) {
  index_[name] = params_.size();
  ag::Parameter p;
  p.name = std::move(name);
  p.value = std::move(value);
  p.zero_grad();
  params_.push_back(std::move(p));
}

ElvisModel ElvisModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ElvisModel model;
  model.cfg_ = cfg;
  std::mt19937_64 rng(seed);

  auto add_linear = [&](const std::string& name, const Linear<double>& l) {
    model.add(name + ".weight", l.weight);
    model.add(name + ".bias", l.bias);
  };
  if (!cfg.external_features) {
    for (Modality m : {Modality::Image, Modality::Text}) {
      const int in = m == Modality::Image ? cfg.channels : cfg.hash_dim;
      const int out = m == Modality::Image ? cfg.image_dim : cfg.text_dim;
      const auto enc = ToyEncoder<double>::init(in, cfg.hidden, out, rng);
      add_linear(prefix(m) + ".encoder.first", enc.first);
      add_linear(prefix(m) + ".encoder.second", enc.second);
    }
  }
  for (Modality m : {Modality::Image, Modality::Text}) {
    const int dim = m == Modality::Image ? cfg.image_dim : cfg.text_dim;
    const auto pool = AttentionPoolParams<double>::init(dim, cfg.pool_key_dim, rng);
    add_linear(prefix(m) + ".pool.query", pool.query);
    add_linear(prefix(m) + ".pool.key", pool.key);
    add_linear(prefix(m) + ".pool.value", pool.value);
    add_linear(prefix(m) + ".pool.output", pool.output);
  }
  for (Modality m : {Modality::Image, Modality::Text}) {
    const int dim = m == Modality::Image ? cfg.image_dim : cfg.text_dim;
    const auto head = ProjectionHead<double>::init(dim, cfg.joint_dim, rng);
    add_linear(prefix(m) + ".head.local", head.local);
    add_linear(prefix(m) + ".head.global", head.global);
    model.add(prefix(m) + ".head.value", head.value);
  }
  model.round_to_float();
  return model;
}

ag::Parameter& ElvisModel::param(const std::string& name) {
  const auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter " + name);
  return params_[it->second];
}

const ag::Parameter& ElvisModel::param(const std::string& name) const {
  const auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter " + name);
  return params_[it->second];
}

std::size_t ElvisModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Linear<double> ElvisModel::linear(const std::string& name) const {
  return {param(name + ".weight").value, param(name + ".bias").value.row(0)};
}

ToyEncoder<double> ElvisModel::encoder(Modality m) const {
  require(!cfg_.external_features, "encoder: model consumes external features");
  return {linear(prefix(m) + ".encoder.first"), linear(prefix(m) + ".encoder.second")};
}

AttentionPoolParams<double> ElvisModel::pool(Modality m) const {
  const std::string p = prefix(m) + ".pool.";
  return {linear(p + "query"), linear(p + "key"), linear(p + "value"), linear(p + "output")};
}

ProjectionHead<double> ElvisModel::head(Modality m) const {
  const std::string p = prefix(m) + ".head.";
  return {linear(p + "local"), linear(p + "global"), param(p + "value").value};
}

LocalEmbeddings<double> ElvisModel::image_locals(const Eigen::MatrixXd& patches) const {
  if (cfg_.external_features) return LocalEmbeddings<double>::image(patches, cfg_.grid_shape());
  return LocalEmbeddings<double>::image(encoder(Modality::Image)(patches), cfg_.grid_shape());
}

LocalEmbeddings<double> ElvisModel::text_locals(const Eigen::MatrixXd& sentences) const {
  if (cfg_.external_features) return LocalEmbeddings<double>::text(sentences);
  return LocalEmbeddings<double>::text(encoder(Modality::Text)(sentences));
}

PairEmbeddings ElvisModel::embed(const PairInput& input) const {
  PairEmbeddings e;
  e.image_local = image_locals(input.image);
  e.text_local = text_locals(input.text);
  e.image_global = attention_pool(e.image_local, pool(Modality::Image));
  e.text_global = attention_pool(e.text_local, pool(Modality::Text));
  const auto hi = head(Modality::Image);
  const auto ht = head(Modality::Text);
  e.image_joint = project_local(e.image_local, hi);
  e.text_joint = project_local(e.text_local, ht);
  e.image_global_joint = project_global(e.image_global, hi);
  e.text_global_joint = project_global(e.text_global, ht);
  return e;
}

void ElvisModel::round_to_float() {
  for (auto& p : params_) p.value = p.value.cast<float>().cast<double>();
}

namespace graph {

ag::Var linear(ag::Tape& tape, ElvisModel& model, const std::string& name, const ag::Var& x) {
  const ag::Var w = tape.parameter(model.param(name + ".weight"));
  const ag::Var b = tape.parameter(model.param(name + ".bias"));
  return ag::add_row(ag::matmul(x, w), b);
}

ag::Var encode(ag::Tape& tape, ElvisModel& model, Modality m, const ag::Var& features) {
  if (model.config().external_features) return features;
  const std::string p = prefix(m) + ".encoder.";
  return linear(tape, model, p + "second", ag::tanh(linear(tape, model, p + "first", features)));
}

ag::Var attention_pool(ag::Tape& tape, ElvisModel& model, Modality m, const ag::Var& locals) {
  const std::string p = prefix(m) + ".pool.";
  const ag::Var q = linear(tape, model, p + "query", ag::mean_rows(locals));
  const ag::Var k = linear(tape, model, p + "key", locals);
  const ag::Var v = linear(tape, model, p + "value", locals);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  const ag::Var a = ag::row_softmax(ag::scale(ag::matmul(q, ag::transpose(k)), inv_sqrt_dk));
  return linear(tape, model, p + "output", ag::matmul(a, v));
}

ag::Var cross_attend(ag::Tape& tape, ElvisModel& model, const ag::Var& z, const ag::Var& other, Modality other_modality) {
  ag::Var w = ag::pairwise_cosine(z, other);
  if (model.config().cross_weights == CrossWeights::SoftmaxCosine) w = ag::row_softmax(w);
  const ag::Var values = ag::matmul(other, tape.parameter(model.param(prefix(other_modality) + ".head.value")));
  return ag::matmul(w, values);
}

PairNodes forward_pair(ag::Tape& tape, ElvisModel& model, const PairInput& input) {
  PairNodes n;
  n.image_local = encode(tape, model, Modality::Image, tape.constant(input.image));
  n.text_local = encode(tape, model, Modality::Text, tape.constant(input.text));
  n.image_joint = linear(tape, model, "image.head.local", n.image_local);
  n.text_joint = linear(tape, model, "text.head.local", n.text_local);
  n.image_global_joint =
      linear(tape, model, "image.head.global", attention_pool(tape, model, Modality::Image, n.image_local));
  n.text_global_joint =
      linear(tape, model, "text.head.global", attention_pool(tape, model, Modality::Text, n.text_local));
  n.image_cross = cross_attend(tape, model, n.image_joint, n.text_joint, Modality::Text);
  n.text_cross = cross_attend(tape, model, n.text_joint, n.image_joint, Modality::Image);
  return n;
}

}  // namespace graph

}  // namespace elvis
