#include "elvis/training.hpp"

#include "elvis/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <iomanip>
#include <map>
#include <sstream>
#include <numbers>
#include <thread>

namespace elvis {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

bool ordered(const std::array<double, 2>& r) { return std::isfinite(r[0]) && std::isfinite(r[1]) && r[0] <= r[1]; }

// Bilinear sample of one channel; zero outside the image.
float sample(const ImageTensor& img, int c, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto at = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) return 0.0;
    return img.at(c, yy, xx);
  };
  const double top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx;
  const double bottom = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

template <typename Map>
ImageTensor warp(const ImageTensor& img, Map source) {
  ImageTensor out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const auto [sy, sx] = source(static_cast<double>(y), static_cast<double>(x));
        out.at(c, y, x) = sample(img, c, sy, sx);
      }
  return out;
}

ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0;
  for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (double& w : kernel) w /= total;

  auto pass = [&](const ImageTensor& in, bool horizontal) {
    ImageTensor out(in.channels, in.height, in.width);
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
          double acc = 0;
          for (int k = -radius; k <= radius; ++k) {
            const int yy = horizontal ? y : std::clamp(y + k, 0, in.height - 1);
            const int xx = horizontal ? std::clamp(x + k, 0, in.width - 1) : x;
            acc += kernel[k + radius] * in.at(c, yy, xx);
          }
          out.at(c, y, x) = static_cast<float>(acc);
        }
    return out;
  };
  return pass(pass(img, true), false);
}

template <typename F>
void parallel_for(std::size_t n, int workers, F body) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

const char* schedule_name(Schedule s) {
  switch (s) {
    case Schedule::Cosine: return "cosine";
    case Schedule::Plateau: return "plateau";
    case Schedule::Step: return "step";
  }
  return "cosine";
}

json bundle_json(const LossBundle& b) {
  return {{"global_it", b.global_img_given_txt}, {"global_ti", b.global_txt_given_img}, {"local_img", b.local_image},
          {"local_txt", b.local_text},           {"total", b.total},                   {"batch_size", b.batch_size}};
}

LossBundle bundle_from_json(const json& j) {
  LossBundle b;
  b.global_img_given_txt = j.at("global_it").get<double>();
  b.global_txt_given_img = j.at("global_ti").get<double>();
  b.local_image = j.at("local_img").get<double>();
  b.local_text = j.at("local_txt").get<double>();
  b.total = j.at("total").get<double>();
  b.batch_size = j.at("batch_size").get<int>();
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// augmentation

AugmentConfig AugmentConfig::identity() {
  AugmentConfig a;
  a.rotation_degrees = {0, 0};
  a.scaling = {1, 1};
  a.color_jitter = {1, 1};
  a.horizontal_flip_prob = 0;
  a.random_crop_scale = {1, 1};
  a.gaussian_blur_sigma = {0, 0};
  return a;
}

void AugmentConfig::validate() const {
  require(ordered(rotation_degrees), "aug.rotation_degrees must be an ordered range");
  require(ordered(scaling) && scaling[0] > 0, "aug.scaling must be an ordered positive range");
  require(ordered(color_jitter) && color_jitter[0] >= 0, "aug.color_jitter must be an ordered non-negative range");
  require(horizontal_flip_prob >= 0 && horizontal_flip_prob <= 1, "aug.horizontal_flip_prob must lie in [0, 1]");
  require(ordered(random_crop_scale) && random_crop_scale[0] > 0 && random_crop_scale[1] <= 1,
          "aug.random_crop_scale must be an ordered range inside (0, 1]");
  require(ordered(gaussian_blur_sigma) && gaussian_blur_sigma[0] >= 0,
          "aug.gaussian_blur_sigma must be an ordered non-negative range");
}

ImageTensor augment(const ImageTensor& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  auto uniform = [&rng](const std::array<double, 2>& r) {
    return r[0] + (r[1] - r[0]) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  };
  const double angle = uniform(cfg.rotation_degrees) * std::numbers::pi / 180.0;
  const double zoom = uniform(cfg.scaling);
  const double brightness = uniform(cfg.color_jitter);
  const double contrast = uniform(cfg.color_jitter);
  const bool flip = uniform({0.0, 1.0}) < cfg.horizontal_flip_prob;
  const double area = uniform(cfg.random_crop_scale);
  const double crop_y = uniform({0.0, 1.0});
  const double crop_x = uniform({0.0, 1.0});
  const double sigma = uniform(cfg.gaussian_blur_sigma);

  ImageTensor img = image;
  const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
  if (angle != 0.0) {
    const double c = std::cos(angle), s = std::sin(angle);
    img = warp(img, [&](double y, double x) {
      const double dy = y - cy, dx = x - cx;
      return std::pair{cy - s * dx + c * dy, cx + c * dx + s * dy};
    });
  }
  if (zoom != 1.0)
    img = warp(img, [&](double y, double x) { return std::pair{cy + (y - cy) / zoom, cx + (x - cx) / zoom}; });
  if (brightness != 1.0)
    for (float& v : img.data) v = static_cast<float>(v * brightness);
  if (contrast != 1.0) {
    double mean = 0;
    for (float v : img.data) mean += v;
    mean /= static_cast<double>(img.data.size());
    for (float& v : img.data) v = static_cast<float>((v - mean) * contrast + mean);
  }
  if (flip) {
    ImageTensor out = img;
    for (int c = 0; c < img.channels; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    img = std::move(out);
  }
  if (area < 1.0) {
    const double side = std::sqrt(area);
    const double h = side * img.height, w = side * img.width;
    const double y0 = crop_y * (img.height - h), x0 = crop_x * (img.width - w);
    const double ry = h / img.height, rx = w / img.width;
    img = warp(img, [&](double y, double x) { return std::pair{y0 + (y + 0.5) * ry - 0.5, x0 + (x + 0.5) * rx - 0.5}; });
  }
  if (sigma > 0.0) img = gaussian_blur(img, sigma);
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

// ---------------------------------------------------------------------------
// configuration

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be at least 1");
  require(learning_rate >= 0 && std::isfinite(learning_rate), "learning_rate must be non-negative");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(early_stop_patience >= 1, "early_stop_patience must be at least 1");
  require(validation_fraction >= 0 && validation_fraction < 1, "validation_fraction must lie in [0, 1)");
  require(grad_accumulation >= 1, "grad_accumulation must be at least 1");
  require(step_gamma > 0, "step_gamma must be positive");
  require(plateau_patience >= 0, "plateau_patience must be non-negative");
  require(plateau_factor > 0 && plateau_factor <= 1, "plateau_factor must lie in (0, 1]");
  augmentation.validate();
  loss.validate();
}

void read_config(KeyValues& kv, TrainConfig& c) {
  c.epochs = kv.get_int("epochs", c.epochs);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  const std::string schedule = kv.get_string("schedule", schedule_name(c.schedule));
  if (schedule == "cosine")
    c.schedule = Schedule::Cosine;
  else if (schedule == "plateau")
    c.schedule = Schedule::Plateau;
  else if (schedule == "step")
    c.schedule = Schedule::Step;
  else
    throw ContractError("config key schedule: expected cosine, plateau or step");
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.seed = kv.get_u64("seed", c.seed);
  c.early_stop = kv.get_bool("early_stop", c.early_stop);
  c.early_stop_patience = kv.get_int("early_stop_patience", c.early_stop_patience);
  c.validation_fraction = kv.get_double("validation_fraction", c.validation_fraction);
  c.grad_accumulation = kv.get_int("grad_accumulation", c.grad_accumulation);
  c.step_milestones = kv.get_list("step_milestones", c.step_milestones);
  c.step_gamma = kv.get_double("step_gamma", c.step_gamma);
  c.plateau_patience = kv.get_int("plateau_patience", c.plateau_patience);
  c.plateau_factor = kv.get_double("plateau_factor", c.plateau_factor);

  AugmentConfig& a = c.augmentation;
  a.enabled = kv.get_bool("aug.enabled", a.enabled);
  a.rotation_degrees = kv.get_range("aug.rotation_degrees", a.rotation_degrees);
  a.scaling = kv.get_range("aug.scaling", a.scaling);
  a.color_jitter = kv.get_range("aug.color_jitter", a.color_jitter);
  a.horizontal_flip_prob = kv.get_double("aug.horizontal_flip_prob", a.horizontal_flip_prob);
  a.random_crop_scale = kv.get_range("aug.random_crop_scale", a.random_crop_scale);
  a.gaussian_blur_sigma = kv.get_range("aug.gaussian_blur_sigma", a.gaussian_blur_sigma);

  LossConfig& l = c.loss;
  l.tau_g = kv.get_double("loss.tau_g", l.tau_g);
  l.tau_l_src = kv.get_double("loss.tau_l_src", l.tau_l_src);
  l.tau_l_tgt = kv.get_double("loss.tau_l_tgt", l.tau_l_tgt);
  const auto lambdas = kv.get_list("loss.lambdas", {l.lambdas.begin(), l.lambdas.end()});
  require(lambdas.size() == 4, "config key loss.lambdas: expected four weights");
  std::copy(lambdas.begin(), lambdas.end(), l.lambdas.begin());
  l.target_gradient_blocked = kv.get_bool("loss.target_gradient_blocked", l.target_gradient_blocked);
  const std::string reduction = kv.get_string("loss.reduction", l.reduction == Reduction::Sum ? "sum" : "mean");
  if (reduction != "sum" && reduction != "mean") throw ContractError("config key loss.reduction: expected sum or mean");
  l.reduction = reduction == "sum" ? Reduction::Sum : Reduction::Mean;
  l.mask_self_similarity_diagonal = kv.get_bool("loss.mask_self_similarity_diagonal", l.mask_self_similarity_diagonal);
  c.validate();
}

void write_config(KeyValues& kv, const TrainConfig& c) {
  kv.set("epochs", std::to_string(c.epochs));
  kv.set("learning_rate", format_double(c.learning_rate));
  kv.set("schedule", schedule_name(c.schedule));
  kv.set("batch_size", std::to_string(c.batch_size));
  kv.set("seed", std::to_string(c.seed));
  kv.set("early_stop", c.early_stop ? "true" : "false");
  kv.set("early_stop_patience", std::to_string(c.early_stop_patience));
  kv.set("validation_fraction", format_double(c.validation_fraction));
  kv.set("grad_accumulation", std::to_string(c.grad_accumulation));
  std::string milestones;
  for (std::size_t i = 0; i < c.step_milestones.size(); ++i)
    milestones += (i ? "," : "") + format_double(c.step_milestones[i]);
  kv.set("step_milestones", milestones);
  kv.set("step_gamma", format_double(c.step_gamma));
  kv.set("plateau_patience", std::to_string(c.plateau_patience));
  kv.set("plateau_factor", format_double(c.plateau_factor));
  const AugmentConfig& a = c.augmentation;
  kv.set("aug.enabled", a.enabled ? "true" : "false");
  kv.set("aug.rotation_degrees", format_range(a.rotation_degrees));
  kv.set("aug.scaling", format_range(a.scaling));
  kv.set("aug.color_jitter", format_range(a.color_jitter));
  kv.set("aug.horizontal_flip_prob", format_double(a.horizontal_flip_prob));
  kv.set("aug.random_crop_scale", format_range(a.random_crop_scale));
  kv.set("aug.gaussian_blur_sigma", format_range(a.gaussian_blur_sigma));
  const LossConfig& l = c.loss;
  kv.set("loss.tau_g", format_double(l.tau_g));
  kv.set("loss.tau_l_src", format_double(l.tau_l_src));
  kv.set("loss.tau_l_tgt", format_double(l.tau_l_tgt));
  std::string lambdas;
  for (std::size_t i = 0; i < 4; ++i) lambdas += (i ? "," : "") + format_double(l.lambdas[i]);
  kv.set("loss.lambdas", lambdas);
  kv.set("loss.target_gradient_blocked", l.target_gradient_blocked ? "true" : "false");
  kv.set("loss.reduction", l.reduction == Reduction::Sum ? "sum" : "mean");
  kv.set("loss.mask_self_similarity_diagonal", l.mask_self_similarity_diagonal ? "true" : "false");
}

void read_config(KeyValues& kv, ModelConfig& c) {
  c.grid = kv.get_int("model.grid", c.grid);
  c.channels = kv.get_int("model.channels", c.channels);
  c.hash_dim = kv.get_int("model.hash_dim", c.hash_dim);
  c.max_sentences = kv.get_int("model.max_sentences", c.max_sentences);
  c.hidden = kv.get_int("model.hidden", c.hidden);
  c.image_dim = kv.get_int("model.image_dim", c.image_dim);
  c.text_dim = kv.get_int("model.text_dim", c.text_dim);
  c.joint_dim = kv.get_int("model.joint_dim", c.joint_dim);
  c.pool_key_dim = kv.get_int("model.pool_key_dim", c.pool_key_dim);
  const std::string cw =
      kv.get_string("model.cross_weights", c.cross_weights == CrossWeights::Cosine ? "cosine" : "softmax");
  if (cw != "cosine" && cw != "softmax") throw ContractError("config key model.cross_weights: expected cosine or softmax");
  c.cross_weights = cw == "cosine" ? CrossWeights::Cosine : CrossWeights::SoftmaxCosine;
  c.external_features = kv.get_bool("model.external_features", c.external_features);
  c.validate();
}

void write_config(KeyValues& kv, const ModelConfig& c) {
  kv.set("model.grid", std::to_string(c.grid));
  kv.set("model.channels", std::to_string(c.channels));
  kv.set("model.hash_dim", std::to_string(c.hash_dim));
  kv.set("model.max_sentences", std::to_string(c.max_sentences));
  kv.set("model.hidden", std::to_string(c.hidden));
  kv.set("model.image_dim", std::to_string(c.image_dim));
  kv.set("model.text_dim", std::to_string(c.text_dim));
  kv.set("model.joint_dim", std::to_string(c.joint_dim));
  kv.set("model.pool_key_dim", std::to_string(c.pool_key_dim));
  kv.set("model.cross_weights", c.cross_weights == CrossWeights::Cosine ? "cosine" : "softmax");
  kv.set("model.external_features", c.external_features ? "true" : "false");
}

std::string config_hash(const TrainConfig& train, const ModelConfig& model) {
  KeyValues kv;
  write_config(kv, train);
  write_config(kv, model);
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << fnv1a(kv.dump());
  return ss.str();
}

// ---------------------------------------------------------------------------
// data

std::vector<TrainExample> make_examples(const std::vector<AlignedSample>& samples, const ModelConfig& cfg) {
  require(!cfg.external_features, "make_examples: synthetic samples need the toy encoders");
  std::vector<TrainExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.id, s.image, make_input(s, cfg)});
  return out;
}

std::vector<TrainExample> make_examples(const ExternalFeatures& features, const ModelConfig& cfg) {
  require(cfg.external_features, "make_examples: external features need model.external_features = true");
  std::vector<TrainExample> out;
  for (std::size_t i = 0; i < features.ids.size(); ++i) {
    const auto& img = features.image[i];
    const auto& txt = features.text[i];
    require(img.size() == cfg.grid_shape().cells(), "features for " + features.ids[i] + ": grid differs from model.grid");
    require(img.dim() == cfg.image_dim, "features for " + features.ids[i] + ": image dimension differs from model.image_dim");
    require(txt.dim() == cfg.text_dim, "features for " + features.ids[i] + ": text dimension differs from model.text_dim");
    out.push_back({features.ids[i], std::nullopt, {img.vectors, txt.valid_rows()}});
  }
  return out;
}

bool in_validation_split(const std::string& id, double fraction) {
  return static_cast<double>(fnv1a(id) % 10000) < fraction * 10000.0;
}

// ---------------------------------------------------------------------------
// forward passes

LossBundle forward_batch(const ElvisModel& model, const std::vector<PairInput>& batch, const LossConfig& cfg) {
  require(!batch.empty(), "forward_batch: empty batch");
  cfg.validate();
  const Index b = static_cast<Index>(batch.size());
  const auto text_value = model.head(Modality::Text).value;
  const auto image_value = model.head(Modality::Image).value;
  const CrossWeights mode = model.config().cross_weights;

  Eigen::MatrixXd gi(b, model.config().joint_dim), gt(b, model.config().joint_dim);
  double local_i = 0, local_t = 0;
  for (Index k = 0; k < b; ++k) {
    PairEmbeddings e;
    try {
      e = model.embed(batch[k]);
    } catch (const ContractError& err) {
      throw ContractError("batch sample " + std::to_string(k) + ": " + err.what());
    }
    gi.row(k) = e.image_global_joint.vector.transpose();
    gt.row(k) = e.text_global_joint.vector.transpose();
    const auto ic = cross_attend(e.image_joint, e.text_joint, text_value, mode);
    const auto tc = cross_attend(e.text_joint, e.image_joint, image_value, mode);
    local_i += local_loss(e.image_local, e.image_joint, ic, cfg);
    local_t += local_loss(e.text_local, e.text_joint, tc, cfg);
  }
  LossBundle out;
  std::tie(out.global_img_given_txt, out.global_txt_given_img) = global_contrastive_loss(gi, gt, cfg.tau_g);
  out.local_image = local_i / static_cast<double>(b);
  out.local_text = local_t / static_cast<double>(b);
  out.batch_size = static_cast<int>(b);
  finalize(out, cfg);
  return out;
}

LossBundle BatchNodes::values() const {
  LossBundle out;
  out.global_img_given_txt = components[0].scalar();
  out.global_txt_given_img = components[1].scalar();
  out.local_image = components[2].scalar();
  out.local_text = components[3].scalar();
  out.total = total.scalar();
  return out;
}

BatchNodes record_batch(ag::Tape& tape, ElvisModel& model, const std::vector<const PairInput*>& batch,
                        const LossConfig& cfg) {
  require(!batch.empty(), "forward_batch: empty batch");
  const Index b = static_cast<Index>(batch.size());
  const Index cells = model.config().grid_shape().cells();
  Index text_rows = 0;
  std::vector<Index> text_offset(b), text_count(b);
  for (Index k = 0; k < b; ++k) {
    const PairInput& in = *batch[k];
    require(in.image.rows() == cells, "batch sample " + std::to_string(k) + ": image rows differ from grid cells");
    require(in.text.rows() >= 1, "batch sample " + std::to_string(k) + ": report has no sentences");
    require(in.image.cols() == batch[0]->image.cols() && in.text.cols() == batch[0]->text.cols(),
            "batch sample " + std::to_string(k) + ": feature width differs within the batch");
    text_offset[k] = text_rows;
    text_count[k] = in.text.rows();
    text_rows += in.text.rows();
  }
  Eigen::MatrixXd xi(b * cells, batch[0]->image.cols()), xt(text_rows, batch[0]->text.cols());
  for (Index k = 0; k < b; ++k) {
    xi.middleRows(k * cells, cells) = batch[k]->image;
    xt.middleRows(text_offset[k], text_count[k]) = batch[k]->text;
  }

  const ag::Var yi = graph::encode(tape, model, Modality::Image, tape.constant(std::move(xi)));
  const ag::Var yt = graph::encode(tape, model, Modality::Text, tape.constant(std::move(xt)));
  const ag::Var zi = graph::linear(tape, model, "image.head.local", yi);
  const ag::Var zt = graph::linear(tape, model, "text.head.local", yt);

  std::vector<ag::Var> yi_k, yt_k, pooled_i, pooled_t;
  for (Index k = 0; k < b; ++k) {
    yi_k.push_back(ag::slice_rows(yi, k * cells, cells));
    yt_k.push_back(ag::slice_rows(yt, text_offset[k], text_count[k]));
    pooled_i.push_back(graph::attention_pool(tape, model, Modality::Image, yi_k.back()));
    pooled_t.push_back(graph::attention_pool(tape, model, Modality::Text, yt_k.back()));
  }
  const ag::Var gi = graph::linear(tape, model, "image.head.global", ag::vstack(pooled_i));
  const ag::Var gt = graph::linear(tape, model, "text.head.global", ag::vstack(pooled_t));
  const auto [global_it, global_ti] = graph::global_losses(gi, gt, cfg.tau_g);

  std::vector<ag::Var> local_i, local_t;
  for (Index k = 0; k < b; ++k) {
    const ag::Var zi_k = ag::slice_rows(zi, k * cells, cells);
    const ag::Var zt_k = ag::slice_rows(zt, text_offset[k], text_count[k]);
    const ag::Var ic = graph::cross_attend(tape, model, zi_k, zt_k, Modality::Text);
    const ag::Var tc = graph::cross_attend(tape, model, zt_k, zi_k, Modality::Image);
    const auto [pi_row, pi_col] = graph::intra_modal_target(yi_k[k], cfg);
    const auto [pt_row, pt_col] = graph::intra_modal_target(yt_k[k], cfg);
    local_i.push_back(graph::local_loss(zi_k, ic, pi_row, pi_col, cfg));
    local_t.push_back(graph::local_loss(zt_k, tc, pt_row, pt_col, cfg));
  }
  const std::vector<double> mean_weights(b, 1.0 / static_cast<double>(b));
  BatchNodes nodes;
  nodes.components = {global_it, global_ti, ag::weighted_sum(local_i, mean_weights),
                      ag::weighted_sum(local_t, mean_weights)};
  nodes.total = graph::total(nodes.components, cfg);
  return nodes;
}

// ---------------------------------------------------------------------------
// optimisation

void adam_step(ElvisModel& model, AdamState& state, double lr) {
  auto& params = model.parameters();
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
      state.v.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }
  }
  require(state.m.size() == params.size(), "adam_step: optimizer state does not match the model");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.grad.size() == 0) p.zero_grad();
    state.m[i] = (state.beta1 * state.m[i] + (1.0 - state.beta1) * p.grad).cast<float>().cast<double>();
    state.v[i] = (state.beta2 * state.v[i] + (1.0 - state.beta2) * p.grad.cwiseAbs2()).cast<float>().cast<double>();
    const Eigen::ArrayXXd update =
        lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.epsilon);
    p.value -= update.matrix();
  }
  model.round_to_float();
}

double learning_rate(const TrainConfig& cfg, const SchedulerState& sched, std::int64_t step,
                     std::int64_t total_steps, int epoch) {
  switch (cfg.schedule) {
    case Schedule::Cosine: {
      if (total_steps <= 1) return cfg.learning_rate;
      const double progress = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
      return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
    }
    case Schedule::Step: {
      double lr = cfg.learning_rate;
      for (double m : cfg.step_milestones)
        if (epoch >= m) lr *= cfg.step_gamma;
      return lr;
    }
    case Schedule::Plateau: return cfg.learning_rate * sched.scale;
  }
  return cfg.learning_rate;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,global_it,global_ti,local_img,local_txt,total,lr\n";
  for (const auto& m : history) {
    out += std::to_string(m.epoch) + "," + format_double(m.train.global_img_given_txt) + "," +
           format_double(m.train.global_txt_given_img) + "," + format_double(m.train.local_image) + "," +
           format_double(m.train.local_text) + "," + format_double(m.train.total) + "," + format_double(m.lr) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr std::string_view kCheckpointMagic = "ELVISCKP";

void append_tensor(json& index, std::vector<float>& data, const std::string& name, const Eigen::MatrixXd& m) {
  index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", data.size()}, {"count", m.size()}});
  const Eigen::MatrixXf f = m.cast<float>();
  data.insert(data.end(), f.data(), f.data() + f.size());
}

}  // namespace

namespace {

std::map<std::string, std::string> model_values(const ModelConfig& cfg) {
  KeyValues kv;
  write_config(kv, cfg);
  return kv.values();
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckp) {
  json index = json::array();
  std::vector<float> data;
  for (const auto& p : ckp.model.parameters()) append_tensor(index, data, p.name, p.value);
  for (std::size_t i = 0; i < ckp.adam.m.size(); ++i) {
    append_tensor(index, data, "adam.m." + ckp.model.parameters()[i].name, ckp.adam.m[i]);
    append_tensor(index, data, "adam.v." + ckp.model.parameters()[i].name, ckp.adam.v[i]);
  }
  json history = json::array();
  for (const auto& m : ckp.history) {
    json row = {{"epoch", m.epoch}, {"train", bundle_json(m.train)}, {"lr", m.lr}};
    if (m.validation_total) row["validation_total"] = *m.validation_total;
    history.push_back(row);
  }
  const auto& s = ckp.scheduler;
  const std::string payload(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  const json manifest = {
      {"format", "elvis-checkpoint"},
      {"version", 1},
      {"epochs_done", ckp.epochs_done},
      {"config_hash", ckp.config_hash},
      {"config", ckp.config.values()},
      {"model", model_values(ckp.model.config())},
      {"metrics", history},
      {"scheduler",
       {{"scale", s.scale}, {"best", s.best}, {"has_best", s.has_best}, {"bad_epochs", s.bad_epochs},
        {"stale_epochs", s.stale_epochs}, {"best_validation", s.best_validation},
        {"has_best_validation", s.has_best_validation}}},
      {"adam", {{"beta1", ckp.adam.beta1}, {"beta2", ckp.adam.beta2}, {"epsilon", ckp.adam.epsilon}, {"step", ckp.adam.step}}},
      {"tensors", index},
      {"data_crc32", io::crc32(payload)},
  };
  const std::string text = manifest.dump();
  std::string out(kCheckpointMagic);
  const std::uint64_t n = text.size();
  out.append(reinterpret_cast<const char*>(&n), sizeof(n));
  out += text;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what) {
  const std::size_t head = kCheckpointMagic.size() + sizeof(std::uint64_t);
  if (bytes.size() < head || std::string_view(bytes).substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw RuntimeFailure(what + ": not a checkpoint file");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + kCheckpointMagic.size(), sizeof(n));
  if (bytes.size() < head + n) throw RuntimeFailure(what + ": truncated checkpoint manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(head, n));
  } catch (const json::exception& e) {
    throw RuntimeFailure(what + ": malformed checkpoint manifest: " + e.what());
  }
  const std::string payload = bytes.substr(head + n);
  if (payload.size() % sizeof(float) != 0) throw RuntimeFailure(what + ": truncated checkpoint data");
  if (manifest.at("data_crc32").get<std::uint32_t>() != io::crc32(payload))
    throw RuntimeFailure(what + ": checkpoint data checksum mismatch");
  const std::size_t floats = payload.size() / sizeof(float);

  KeyValues config;
  for (const auto& [k, v] : manifest.at("config").items()) config.set(k, v.get<std::string>());
  KeyValues reader;
  for (const auto& [k, v] : manifest.at("model").items()) reader.set(k, v.get<std::string>());
  ModelConfig model_cfg;
  read_config(reader, model_cfg);

  Checkpoint ckp{ElvisModel::init(model_cfg, 0)};
  ckp.config = config;
  ckp.config_hash = manifest.at("config_hash").get<std::string>();
  ckp.epochs_done = manifest.at("epochs_done").get<int>();

  std::map<std::string, Eigen::MatrixXd> tensors;
  for (const auto& t : manifest.at("tensors")) {
    const auto rows = t.at("rows").get<Index>(), cols = t.at("cols").get<Index>();
    const auto offset = t.at("offset").get<std::size_t>(), count = t.at("count").get<std::size_t>();
    if (offset + count > floats || static_cast<std::size_t>(rows * cols) != count)
      throw RuntimeFailure(what + ": tensor " + t.at("name").get<std::string>() + " lies outside the data block");
    Eigen::MatrixXf f(rows, cols);
    std::memcpy(f.data(), payload.data() + offset * sizeof(float), count * sizeof(float));
    tensors[t.at("name").get<std::string>()] = f.cast<double>();
  }
  for (auto& p : ckp.model.parameters()) {
    const auto it = tensors.find(p.name);
    if (it == tensors.end()) throw RuntimeFailure(what + ": missing tensor " + p.name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw RuntimeFailure(what + ": tensor " + p.name + " has the wrong shape");
    p.value = it->second;
    p.zero_grad();
  }
  const json& adam = manifest.at("adam");
  ckp.adam.beta1 = adam.at("beta1").get<double>();
  ckp.adam.beta2 = adam.at("beta2").get<double>();
  ckp.adam.epsilon = adam.at("epsilon").get<double>();
  ckp.adam.step = adam.at("step").get<std::int64_t>();
  if (tensors.count("adam.m." + ckp.model.parameters().front().name)) {
    for (const auto& p : ckp.model.parameters()) {
      const auto m = tensors.find("adam.m." + p.name), v = tensors.find("adam.v." + p.name);
      if (m == tensors.end() || v == tensors.end()) throw RuntimeFailure(what + ": incomplete optimizer state");
      ckp.adam.m.push_back(m->second);
      ckp.adam.v.push_back(v->second);
    }
  }
  const json& s = manifest.at("scheduler");
  ckp.scheduler.scale = s.at("scale").get<double>();
  ckp.scheduler.best = s.at("best").get<double>();
  ckp.scheduler.has_best = s.at("has_best").get<bool>();
  ckp.scheduler.bad_epochs = s.at("bad_epochs").get<int>();
  ckp.scheduler.stale_epochs = s.at("stale_epochs").get<int>();
  ckp.scheduler.best_validation = s.at("best_validation").get<double>();
  ckp.scheduler.has_best_validation = s.at("has_best_validation").get<bool>();
  for (const auto& row : manifest.at("metrics")) {
    EpochMetrics m;
    m.epoch = row.at("epoch").get<int>();
    m.train = bundle_from_json(row.at("train"));
    m.lr = row.at("lr").get<double>();
    if (row.contains("validation_total")) m.validation_total = row.at("validation_total").get<double>();
    ckp.history.push_back(m);
  }
  return ckp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckp) {
  io::write_file_atomic(path, encode_checkpoint(ckp));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// training loop

Checkpoint train(const std::vector<TrainExample>& examples, const TrainConfig& cfg, const ModelConfig& model_cfg,
                 const TrainOptions& options) {
  cfg.validate();
  model_cfg.validate();
  require(!examples.empty(), "train: dataset is empty");

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < examples.size(); ++i)
    (in_validation_split(examples[i].id, cfg.validation_fraction) ? val_idx : train_idx).push_back(i);
  require(!train_idx.empty(), "train: the validation split left no training samples");

  KeyValues config;
  write_config(config, cfg);
  write_config(config, model_cfg);
  const std::string hash = config_hash(cfg, model_cfg);

  Checkpoint state = options.resume ? *options.resume : Checkpoint{ElvisModel::init(model_cfg, cfg.seed)};
  if (options.resume) {
    require(options.resume->config_hash == hash, "resume: checkpoint was written with a different configuration");
  } else {
    state.config = config;
    state.config_hash = hash;
  }
  ElvisModel& model = state.model;
  for (auto& p : model.parameters()) p.zero_grad();

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t batches = static_cast<std::int64_t>((train_idx.size() + bs - 1) / bs);
  const std::int64_t steps_per_epoch = (batches + cfg.grad_accumulation - 1) / cfg.grad_accumulation;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  const GridShape grid = model_cfg.grid_shape();

  for (int epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    if (options.stop_after && epoch >= *options.stop_after) break;
    std::vector<std::size_t> order = train_idx;
    std::mt19937_64 shuffle_rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch), 0x5eed));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossBundle sums;
    double lr = 0;
    int micro = 0;
    for (std::int64_t bi = 0; bi < batches; ++bi) {
      const std::size_t begin = static_cast<std::size_t>(bi) * bs;
      const std::size_t end = std::min(order.size(), begin + bs);
      std::vector<PairInput> inputs(end - begin);
      parallel_for(inputs.size(), options.workers, [&](std::size_t k) {
        const std::size_t idx = order[begin + k];
        const TrainExample& ex = examples[idx];
        inputs[k] = ex.input;
        if (ex.image && cfg.augmentation.enabled) {
          std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch), idx));
          inputs[k].image = patch_features(augment(*ex.image, cfg.augmentation, rng), grid);
        }
      });
      std::vector<const PairInput*> ptrs;
      for (const auto& in : inputs) ptrs.push_back(&in);

      ag::Tape tape;
      const BatchNodes nodes = record_batch(tape, model, ptrs, cfg.loss);
      const LossBundle v = nodes.values();
      if (!std::isfinite(v.total))
        throw RuntimeFailure("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(bi) + "; the last completed epoch's checkpoint is kept");
      tape.backward(nodes.total);
      sums.global_img_given_txt += v.global_img_given_txt;
      sums.global_txt_given_img += v.global_txt_given_img;
      sums.local_image += v.local_image;
      sums.local_text += v.local_text;
      sums.total += v.total;

      if (++micro == cfg.grad_accumulation || bi + 1 == batches) {
        if (micro > 1)
          for (auto& p : model.parameters()) p.grad /= static_cast<double>(micro);
        lr = learning_rate(cfg, state.scheduler, state.adam.step, total_steps, epoch);
        adam_step(model, state.adam, lr);
        for (auto& p : model.parameters()) {
          if (!p.value.allFinite())
            throw RuntimeFailure("training diverged at epoch " + std::to_string(epoch) + ": " + p.name +
                                 " is non-finite; the last completed epoch's checkpoint is kept");
          p.zero_grad();
        }
        micro = 0;
      }
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.lr = lr;
    const double nb = static_cast<double>(batches);
    metrics.train.global_img_given_txt = sums.global_img_given_txt / nb;
    metrics.train.global_txt_given_img = sums.global_txt_given_img / nb;
    metrics.train.local_image = sums.local_image / nb;
    metrics.train.local_text = sums.local_text / nb;
    metrics.train.total = sums.total / nb;
    metrics.train.batch_size = cfg.batch_size;

    if (!val_idx.empty()) {
      double total = 0;
      std::size_t count = 0;
      for (std::size_t begin = 0; begin < val_idx.size(); begin += bs) {
        std::vector<PairInput> batch;
        for (std::size_t k = begin; k < std::min(val_idx.size(), begin + bs); ++k)
          batch.push_back(examples[val_idx[k]].input);
        total += forward_batch(model, batch, cfg.loss).total;
        ++count;
      }
      metrics.validation_total = total / static_cast<double>(count);
    }

    const double monitor = metrics.validation_total.value_or(metrics.train.total);
    SchedulerState& sched = state.scheduler;
    if (cfg.schedule == Schedule::Plateau) {
      if (!sched.has_best || monitor < sched.best * (1.0 - 1e-4)) {
        sched.best = monitor;
        sched.has_best = true;
        sched.bad_epochs = 0;
      } else if (++sched.bad_epochs > cfg.plateau_patience) {
        sched.scale *= cfg.plateau_factor;
        sched.bad_epochs = 0;
      }
    }
    if (!sched.has_best_validation || monitor < sched.best_validation) {
      sched.best_validation = monitor;
      sched.has_best_validation = true;
      sched.stale_epochs = 0;
    } else {
      ++sched.stale_epochs;
    }

    state.history.push_back(metrics);
    state.epochs_done = epoch + 1;
    if (options.out_dir) {
      io::write_file_atomic(*options.out_dir / "metrics.csv", metrics_csv(state.history));
      save_checkpoint(*options.out_dir / "checkpoint.bin", state);
    }
    if (options.on_epoch) options.on_epoch(metrics);
    if (cfg.early_stop && sched.stale_epochs >= cfg.early_stop_patience) break;
  }
  return state;
}

}  // namespace elvis
