#include "elvis/evaluation.hpp"

#include "elvis/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace elvis {

SimilarityMatrix<double> similarity_map(const Eigen::VectorXd& query, const LocalEmbeddings<double>& image_locals) {
  image_locals.validate();
  require(image_locals.grid.has_value(), "similarity_map: image locals need a grid shape");
  require(query.size() == image_locals.dim(), "similarity_map: query and image dimensions differ");
  const GridShape g = *image_locals.grid;
  const Eigen::VectorXd s = pairwise_cosine(image_locals.vectors, query.transpose()).col(0);
  SimilarityMatrix<double> out;
  out.values.resize(g.rows, g.cols);
  for (Index r = 0; r < g.rows; ++r)
    for (Index c = 0; c < g.cols; ++c) out.values(r, c) = s(r * g.cols + c);
  out.row_mask = Mask::Constant(g.rows, true);
  out.col_mask = Mask::Constant(g.cols, true);
  return out;
}

BoolGrid interior_cells(GridShape grid, const std::vector<GridBox>& boxes) {
  BoolGrid in = BoolGrid::Constant(grid.rows, grid.cols, false);
  for (const auto& b : boxes) {
    require(b.row0 >= 0 && b.col0 >= 0 && b.row1 <= grid.rows && b.col1 <= grid.cols && b.row0 < b.row1 &&
                b.col0 < b.col1,
            "box (" + std::to_string(b.row0) + "," + std::to_string(b.col0) + "," + std::to_string(b.row1) + "," +
                std::to_string(b.col1) + ") lies outside the grid or is empty");
    for (Index r = 0; r < grid.rows; ++r)
      for (Index c = 0; c < grid.cols; ++c) {
        const double cr = r + 0.5, cc = c + 0.5;
        if (cr >= b.row0 && cr < b.row1 && cc >= b.col0 && cc < b.col1) in(r, c) = true;
      }
  }
  return in;
}

CnrResult cnr(const Eigen::MatrixXd& map, const std::vector<GridBox>& boxes) {
  require(map.allFinite(), "cnr: map must be finite");
  const BoolGrid in = interior_cells({map.rows(), map.cols()}, boxes);
  CnrResult r;
  r.n_in = in.count();
  r.n_out = in.size() - r.n_in;
  require(r.n_in > 0, "cnr: no interior cell");
  require(r.n_out > 0, "cnr: no exterior cell");
  double sum_in = 0, sum_out = 0;
  for (Index i = 0; i < map.size(); ++i) (in(i) ? sum_in : sum_out) += map(i);
  r.mu_in = sum_in / static_cast<double>(r.n_in);
  r.mu_out = sum_out / static_cast<double>(r.n_out);
  for (Index i = 0; i < map.size(); ++i) {
    const double d = map(i) - (in(i) ? r.mu_in : r.mu_out);
    (in(i) ? r.var_in : r.var_out) += d * d;
  }
  r.var_in /= static_cast<double>(r.n_in);
  r.var_out /= static_cast<double>(r.n_out);
  r.non_absolute = (r.mu_in - r.mu_out) / (std::sqrt(r.var_in + r.var_out) + kCnrEpsilon);
  r.absolute = std::abs(r.non_absolute);
  return r;
}

GroundingCase make_grounding_case(const ElvisModel& model, const std::string& id, const ImageTensor& image,
                                  const std::string& query, std::vector<GridBox> boxes) {
  const ModelConfig& cfg = model.config();
  require(!boxes.empty(), "grounding case " + id + ": no ground-truth boxes");
  GroundingCase gc;
  gc.id = id;
  gc.image = project_local(model.image_locals(patch_features(image, cfg.grid_shape())), model.head(Modality::Image));
  const auto text = project_local(model.text_locals(sentence_features({query}, cfg.hash_dim, 1)),
                                  model.head(Modality::Text));
  gc.query = text.vectors.row(0).transpose();
  gc.label = boxes.front().label;
  gc.gt_box_count = static_cast<int>(boxes.size());
  gc.boxes = std::move(boxes);
  return gc;
}

std::vector<GroundingCase> grounding_cases(const ElvisModel& model, const std::vector<AlignedSample>& samples) {
  std::vector<GroundingCase> out;
  for (const auto& s : samples) {
    for (std::size_t k = 0; k < s.sentence_boxes.size(); ++k) {
      if (s.sentence_boxes[k].empty()) continue;
      std::vector<GridBox> boxes;
      for (int b : s.sentence_boxes[k]) boxes.push_back(s.boxes[static_cast<std::size_t>(b)]);
      out.push_back(make_grounding_case(model, s.id, s.image, s.report.sentences[k], std::move(boxes)));
      break;
    }
  }
  return out;
}

double GroundingReport::value(const std::string& group, const std::string& metric) const {
  for (const auto& r : rows)
    if (r.group == group && r.metric == metric) return r.value;
  throw ContractError("grounding report has no row " + group + "/" + metric);
}

std::string GroundingReport::csv() const {
  std::string out = "group,metric,value,n\n";
  for (const auto& r : rows) out += r.group + "," + r.metric + "," + format_double(r.value) + "," + std::to_string(r.n) + "\n";
  out += "Excluded,count," + std::to_string(excluded) + "," + std::to_string(excluded) + "\n";
  return out;
}

GroundingReport grounding_report(const std::vector<GroundingCase>& cases) {
  GroundingReport report;
  struct Acc {
    double cnr = 0, cnr_abs = 0;
    std::size_t n = 0;
  };
  Acc all, single, multiple;
  std::map<std::string, Acc> by_label;
  for (const auto& c : cases) {
    CnrResult r;
    try {
      r = cnr(similarity_map(c.query, c.image).values, c.boxes);
    } catch (const ContractError& e) {
      ++report.excluded;
      report.exclusion_reasons.push_back(c.id + ": " + e.what());
      continue;
    }
    report.per_case.push_back(r);
    for (Acc* a : {&all, c.gt_box_count > 1 ? &multiple : &single, &by_label[c.label]}) {
      a->cnr += r.non_absolute;
      a->cnr_abs += r.absolute;
      ++a->n;
    }
  }
  if (all.n == 0) throw ContractError("grounding report: no valid case after exclusions");
  auto emit = [&report](const std::string& group, const Acc& a) {
    const double n = static_cast<double>(a.n);
    report.rows.push_back({group, "cnr", a.n ? a.cnr / n : 0.0, a.n});
    report.rows.push_back({group, "cnr_abs", a.n ? a.cnr_abs / n : 0.0, a.n});
  };
  emit("Avg", all);
  emit("Single", single);
  emit("Multiple", multiple);
  for (const auto& [label, a] : by_label) emit("finding:" + label, a);
  return report;
}

double dice(const BoolGrid& a, const BoolGrid& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "dice: mask shapes differ");
  const Index sa = a.count(), sb = b.count();
  if (sa + sb == 0) return 1.0;
  return 2.0 * static_cast<double>((a && b).count()) / static_cast<double>(sa + sb);
}

void ProbeConfig::validate() const {
  require(learning_rate > 0 && std::isfinite(learning_rate), "probe.learning_rate must be positive");
  require(epochs >= 1, "probe.epochs must be at least 1");
  require(batch_size >= 1, "probe.batch_size must be at least 1");
  require(!label.empty(), "probe.label must not be empty");
}

void read_config(KeyValues& kv, ProbeConfig& c) {
  c.learning_rate = kv.get_double("probe.learning_rate", c.learning_rate);
  c.epochs = kv.get_int("probe.epochs", c.epochs);
  c.batch_size = kv.get_int("probe.batch_size", c.batch_size);
  c.label = kv.get_string("probe.label", c.label);
  c.seed = kv.get_u64("probe.seed", c.seed);
  c.validate();
}

void write_config(KeyValues& kv, const ProbeConfig& c) {
  kv.set("probe.learning_rate", format_double(c.learning_rate));
  kv.set("probe.epochs", std::to_string(c.epochs));
  kv.set("probe.batch_size", std::to_string(c.batch_size));
  kv.set("probe.label", c.label);
  kv.set("probe.seed", std::to_string(c.seed));
}

Eigen::MatrixXd probe_features(const ElvisModel& model, const ImageTensor& image) {
  const auto y = model.image_locals(patch_features(image, model.config().grid_shape()));
  return project_local(y, model.head(Modality::Image)).vectors;
}

Eigen::VectorXd cell_targets(const AlignedSample& sample, const std::string& label) {
  std::vector<GridBox> boxes;
  for (const auto& b : sample.boxes)
    if (b.label == label) boxes.push_back(b);
  const BoolGrid in = interior_cells(sample.grid, boxes);
  Eigen::VectorXd t(in.size());
  for (Index r = 0; r < in.rows(); ++r)
    for (Index c = 0; c < in.cols(); ++c) t(r * in.cols() + c) = in(r, c) ? 1.0 : 0.0;
  return t;
}

LinearProbe linear_probe_train(const ElvisModel& model, const std::vector<AlignedSample>& samples,
                               const ProbeConfig& cfg) {
  cfg.validate();
  require(!samples.empty(), "linear probe: no training samples");
  std::vector<Eigen::MatrixXd> features;
  std::vector<Eigen::VectorXd> targets;
  for (const auto& s : samples) {
    features.push_back(probe_features(model, s.image));
    targets.push_back(cell_targets(s, cfg.label));
    require(targets.back().size() == features.back().rows(), "linear probe: mask grid differs from the model grid");
  }
  const Index d = features.front().cols();
  LinearProbe probe{Eigen::VectorXd::Zero(d), 0.0};

  // Adam on (weight, bias) with the analytic gradient of the mean BCE.
  Eigen::VectorXd m = Eigen::VectorXd::Zero(d + 1), v = Eigen::VectorXd::Zero(d + 1);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      Eigen::VectorXd g = Eigen::VectorXd::Zero(d + 1);
      double count = 0;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& x = features[order[k]];
        const Eigen::ArrayXd logits = (x * probe.weight).array() + probe.bias;
        const Eigen::VectorXd err = ((1.0 / (1.0 + (-logits).exp())) - targets[order[k]].array()).matrix();
        g.head(d) += x.transpose() * err;
        g(d) += err.sum();
        count += static_cast<double>(x.rows());
      }
      g /= count;
      ++t;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g.cwiseAbs2();
      const Eigen::VectorXd mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
      const Eigen::VectorXd vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
      const Eigen::VectorXd step = cfg.learning_rate * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
      probe.weight -= step.head(d);
      probe.bias -= step(d);
    }
  }
  return probe;
}

BoolGrid predict_mask(const ElvisModel& model, const LinearProbe& probe, const AlignedSample& sample) {
  const Eigen::MatrixXd x = probe_features(model, sample.image);
  require(probe.weight.size() == x.cols(), "predict_mask: probe and feature dimensions differ");
  const Eigen::VectorXd logits = (x * probe.weight).array() + probe.bias;
  const GridShape g = model.config().grid_shape();
  const int h = sample.image.height, w = sample.image.width;
  BoolGrid mask(h, w);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      const Index r = static_cast<Index>(y) * g.rows / h, c = static_cast<Index>(xx) * g.cols / w;
      mask(y, xx) = logits(r * g.cols + c) > 0.0;
    }
  return mask;
}

SegmentationResult evaluate_segmentation(const ElvisModel& model, const LinearProbe& probe,
                                         const std::vector<AlignedSample>& samples, const std::string& label) {
  require(!samples.empty(), "evaluate_segmentation: no samples");
  SegmentationResult out;
  double total = 0;
  Index inter = 0, sizes = 0;
  for (const auto& s : samples) {
    const BoolGrid pred = predict_mask(model, probe, s);
    const BoolGrid gt = pixel_mask(s, {label});
    total += dice(pred, gt);
    inter += (pred && gt).count();
    sizes += pred.count() + gt.count();
  }
  out.images = samples.size();
  out.mean_dice = total / static_cast<double>(samples.size());
  out.pooled_dice = sizes == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(sizes);
  return out;
}

double intra_modal_preservation(const ElvisModel& model, const std::vector<AlignedSample>& samples) {
  require(!samples.empty(), "intra_modal_preservation: no samples");
  const auto head = model.head(Modality::Image);
  double total = 0;
  for (const auto& s : samples) {
    const auto y = model.image_locals(patch_features(s.image, model.config().grid_shape()));
    const auto z = project_local(y, head);
    total += upper_triangle_pearson(pairwise_cosine(y.vectors, y.vectors), pairwise_cosine(z.vectors, z.vectors));
  }
  return total / static_cast<double>(samples.size());
}

MeanCi mean_ci(const std::vector<double>& values) {
  require(!values.empty(), "mean_ci: no values");
  MeanCi out;
  out.n = values.size();
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(out.n);
  if (out.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.half_width = 1.96 * std::sqrt(ss / static_cast<double>(out.n - 1)) / std::sqrt(static_cast<double>(out.n));
  }
  return out;
}

Eigen::MatrixXd bilinear_resize(const Eigen::MatrixXd& map, int rows, int cols) {
  require(rows >= 1 && cols >= 1 && map.size() > 0, "bilinear_resize: empty shape");
  Eigen::MatrixXd out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double sy = std::clamp((r + 0.5) * map.rows() / rows - 0.5, 0.0, static_cast<double>(map.rows() - 1));
      const double sx = std::clamp((c + 0.5) * map.cols() / cols - 0.5, 0.0, static_cast<double>(map.cols() - 1));
      const Index y0 = static_cast<Index>(sy), x0 = static_cast<Index>(sx);
      const Index y1 = std::min<Index>(y0 + 1, map.rows() - 1), x1 = std::min<Index>(x0 + 1, map.cols() - 1);
      const double fy = sy - y0, fx = sx - x0;
      out(r, c) = (map(y0, x0) * (1 - fx) + map(y0, x1) * fx) * (1 - fy) + (map(y1, x0) * (1 - fx) + map(y1, x1) * fx) * fy;
    }
  return out;
}

Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> heatmap_levels(const Eigen::MatrixXd& map) {
  require(map.size() > 0 && map.allFinite(), "heatmap: map must be non-empty and finite");
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> out(map.rows(), map.cols());
  for (Index i = 0; i < map.size(); ++i)
    out(i) = hi > lo ? static_cast<int>(std::lround((map(i) - lo) / (hi - lo) * 255.0)) : 128;
  return out;
}

HeatmapFiles export_heatmap(const Eigen::MatrixXd& map, const std::filesystem::path& path,
                            const HeatmapOptions& options) {
  require(map.size() > 0 && map.allFinite(), "export_heatmap: map must be non-empty and finite");
  const Eigen::MatrixXd shown =
      options.upsample ? bilinear_resize(map, options.upsample->first, options.upsample->second) : map;
  const auto levels = heatmap_levels(shown);
  std::string pgm = "P5\n" + std::to_string(shown.cols()) + " " + std::to_string(shown.rows()) + "\n255\n";
  for (Index r = 0; r < shown.rows(); ++r)
    for (Index c = 0; c < shown.cols(); ++c) pgm.push_back(static_cast<char>(static_cast<unsigned char>(levels(r, c))));

  HeatmapFiles files;
  files.pgm = path;
  files.csv = std::filesystem::path(path).replace_extension(".csv");
  files.sidecar = std::filesystem::path(path).replace_extension(".txt");
  try {
    io::write_file_atomic(files.pgm, pgm);
    if (options.write_csv) {
      std::string csv;
      for (Index r = 0; r < map.rows(); ++r) {
        for (Index c = 0; c < map.cols(); ++c) csv += (c ? "," : "") + format_double(map(r, c));
        csv += "\n";
      }
      io::write_file_atomic(files.csv, csv);
    }
    const double lo = shown.minCoeff(), hi = shown.maxCoeff();
    io::write_file_atomic(files.sidecar, "min=" + format_double(lo) + "\nmax=" + format_double(hi) +
                                             "\nconstant=" + (lo == hi ? "1" : "0") + "\nrows=" +
                                             std::to_string(shown.rows()) + "\ncols=" + std::to_string(shown.cols()) + "\n");
  } catch (const std::filesystem::filesystem_error& e) {
    throw RuntimeFailure(std::string("export_heatmap: ") + e.what());
  }
  return files;
}

Eigen::MatrixXd read_heatmap_csv(const std::filesystem::path& path) {
  std::stringstream in(io::read_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) throw RuntimeFailure(path.string() + ": ragged heatmap CSV");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw RuntimeFailure(path.string() + ": empty heatmap CSV");
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index r = 0; r < out.rows(); ++r)
    for (Index c = 0; c < out.cols(); ++c) out(r, c) = rows[r][c];
  return out;
}

}  // namespace elvis
