#include "elvis/cli.hpp"

#include "elvis/evaluation.hpp"
#include "elvis/io.hpp"
#include "elvis/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifndef ELVIS_VERSION
#define ELVIS_VERSION "0.0.0"
#endif

namespace elvis::cli {

namespace fs = std::filesystem;
using nlohmann::json;

const char* code_version() { return ELVIS_VERSION; }

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  int workers = 1;
};

KeyValues resolve(const Common& c) {
  KeyValues kv = c.config.empty() ? KeyValues{} : KeyValues::load(c.config);
  for (const auto& o : c.overrides) kv.set_override(o);
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  return kv;
}

fs::path out_dir(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("ELVIS_OUT"); env && *env) return env;
  return "elvis-out";
}

fs::path required_path(KeyValues& kv, const std::string& key, const std::string& what) {
  const std::string v = kv.get_string(key, "");
  if (v.empty()) throw ContractError("missing " + what + " path (set " + key + "=<path>)");
  if (!fs::exists(v)) throw ContractError(what + " path does not exist: " + v + " (key " + key + ")");
  return v;
}

void write_run_manifest(const fs::path& dir, const std::string& subcommand, const KeyValues& resolved,
                        std::uint64_t seed) {
  json config = resolved.values();
  const json manifest = {{"subcommand", subcommand},
                         {"config", config},
                         {"config_hash", [&] {
                            std::ostringstream ss;
                            ss << std::hex << std::setw(16) << std::setfill('0') << fnv1a(resolved.dump());
                            return ss.str();
                          }()},
                         {"seed", seed},
                         {"code_version", code_version()}};
  io::write_file_atomic(dir / "run.json", manifest.dump(2) + "\n");
}

void read_world(KeyValues& kv, SyntheticWorldConfig& w) {
  w.grid = kv.get_int("world.grid", w.grid);
  w.image_size = kv.get_int("world.image_size", w.image_size);
  w.channels = kv.get_int("world.channels", w.channels);
  w.roi_count_range = kv.get_int_range("world.roi_count_range", w.roi_count_range);
  w.roi_size_range = kv.get_int_range("world.roi_size_range", w.roi_size_range);
  w.duplicate_sentence_prob = kv.get_double("world.duplicate_sentence_prob", w.duplicate_sentence_prob);
  w.bilateral_prob = kv.get_double("world.bilateral_prob", w.bilateral_prob);
  w.filler_range = kv.get_int_range("world.filler_range", w.filler_range);
  w.max_sentences = kv.get_int("world.max_sentences", w.max_sentences);
  w.seed = kv.get_u64("seed", w.seed);
  w.validate();
}

void write_world(KeyValues& kv, const SyntheticWorldConfig& w) {
  kv.set("world.grid", std::to_string(w.grid));
  kv.set("world.image_size", std::to_string(w.image_size));
  kv.set("world.channels", std::to_string(w.channels));
  kv.set("world.roi_count_range", format_int_range(w.roi_count_range));
  kv.set("world.roi_size_range", format_int_range(w.roi_size_range));
  kv.set("world.duplicate_sentence_prob", format_double(w.duplicate_sentence_prob));
  kv.set("world.bilateral_prob", format_double(w.bilateral_prob));
  kv.set("world.filler_range", format_int_range(w.filler_range));
  kv.set("world.max_sentences", std::to_string(w.max_sentences));
  kv.set("seed", std::to_string(w.seed));
}

int gen_data(const Common& c, std::ostream& out) {
  KeyValues kv = resolve(c);
  SyntheticWorldConfig world;
  read_world(kv, world);
  const int count = kv.get_int("count", 200);
  const std::uint64_t first = kv.get_u64("first_index", 0);
  require(count >= 0, "count must be non-negative");
  kv.reject_unknown();

  const fs::path dir = out_dir(c);
  Dataset data{world.grid_shape(), generate_samples(world, first, static_cast<std::size_t>(count)), world};
  write_dataset(dir, data);
  KeyValues resolved;
  write_world(resolved, world);
  resolved.set("count", std::to_string(count));
  resolved.set("first_index", std::to_string(first));
  write_run_manifest(dir, "gen-data", resolved, world.seed);
  out << "wrote " << count << " samples to " << dir.string() << "\n";
  return kExitOk;
}

std::vector<TrainExample> load_examples(const fs::path& dir, const ModelConfig& mc) {
  if (mc.external_features) return make_examples(load_external_features(dir), mc);
  return make_examples(read_dataset(dir).samples, mc);
}

int pretrain(const Common& c, std::ostream& out) {
  KeyValues kv = resolve(c);
  const fs::path dataset = required_path(kv, "dataset", "dataset");
  const std::string resume_path = kv.get_string("resume", "");
  TrainConfig tc;
  ModelConfig mc;
  read_config(kv, tc);
  read_config(kv, mc);
  kv.reject_unknown();

  const fs::path dir = out_dir(c);
  const auto examples = load_examples(dataset, mc);
  KeyValues resolved;
  write_config(resolved, tc);
  write_config(resolved, mc);
  resolved.set("dataset", dataset.string());
  if (!resume_path.empty()) resolved.set("resume", resume_path);
  write_run_manifest(dir, "pretrain", resolved, tc.seed);

  TrainOptions options;
  options.workers = c.workers;
  options.out_dir = dir;
  if (!resume_path.empty()) {
    require(fs::exists(resume_path), "resume path does not exist: " + resume_path + " (key resume)");
    options.resume = load_checkpoint(resume_path);
  }
  options.on_epoch = [&out](const EpochMetrics& m) {
    out << "epoch " << m.epoch << " total " << m.train.total << " lr " << m.lr << "\n";
  };
  const Checkpoint ckp = train(examples, tc, mc, options);
  out << "trained " << ckp.epochs_done << " epochs; checkpoint at " << (dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

ElvisModel load_model(KeyValues& kv, std::uint64_t seed) {
  const std::string path = kv.get_string("checkpoint", "");
  if (path.empty()) throw ContractError("missing checkpoint path (set checkpoint=<file>, or checkpoint=random)");
  if (path == "random") {
    ModelConfig mc;
    read_config(kv, mc);
    return ElvisModel::init(mc, seed);
  }
  if (!fs::exists(path)) throw ContractError("checkpoint path does not exist: " + path + " (key checkpoint)");
  return load_checkpoint(path).model;
}

int eval_grounding(const Common& c, std::ostream& out) {
  KeyValues kv = resolve(c);
  const fs::path dataset = required_path(kv, "dataset", "dataset");
  const std::uint64_t seed = kv.get_u64("seed", 0);
  const ElvisModel model = load_model(kv, seed);
  kv.reject_unknown();
  require(!model.config().external_features, "eval-grounding needs the toy encoders to embed query phrases");

  const Dataset data = read_dataset(dataset);
  std::vector<GroundingCase> cases;
  for (const auto& s : data.samples) {
    const fs::path query = dataset / "queries" / (s.id + ".txt");
    if (fs::exists(query)) {
      std::string text = io::read_file(query);
      while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
      cases.push_back(make_grounding_case(model, s.id, s.image, text, s.boxes));
    } else {
      auto one = grounding_cases(model, {s});
      cases.insert(cases.end(), one.begin(), one.end());
    }
  }
  const GroundingReport report = grounding_report(cases);
  const fs::path dir = out_dir(c);
  io::write_file_atomic(dir / "grounding.csv", report.csv());
  KeyValues resolved = kv;
  write_run_manifest(dir, "eval-grounding", resolved, seed);
  for (const auto& reason : report.exclusion_reasons) out << "excluded " << reason << "\n";
  out << report.csv();
  return kExitOk;
}

int eval_segmentation(const Common& c, std::ostream& out) {
  KeyValues kv = resolve(c);
  const fs::path dataset = required_path(kv, "dataset", "dataset");
  const fs::path eval_dataset = required_path(kv, "eval_dataset", "evaluation dataset");
  const std::uint64_t seed = kv.get_u64("seed", 0);
  const ElvisModel model = load_model(kv, seed);
  ProbeConfig pc;
  pc.seed = seed;
  read_config(kv, pc);
  kv.reject_unknown();

  const LinearProbe probe = linear_probe_train(model, read_dataset(dataset).samples, pc);
  const SegmentationResult r = evaluate_segmentation(model, probe, read_dataset(eval_dataset).samples, pc.label);
  const std::string csv = "metric,value,n\nmean_dice," + format_double(r.mean_dice) + "," + std::to_string(r.images) +
                          "\npooled_dice," + format_double(r.pooled_dice) + "," + std::to_string(r.images) + "\n";
  const fs::path dir = out_dir(c);
  io::write_file_atomic(dir / "segmentation.csv", csv);
  write_run_manifest(dir, "eval-segmentation", kv, pc.seed);
  out << csv;
  return kExitOk;
}

int export_heatmap_cmd(const Common& c, std::ostream& out) {
  KeyValues kv = resolve(c);
  const fs::path dataset = required_path(kv, "dataset", "dataset");
  const std::uint64_t seed = kv.get_u64("seed", 0);
  const ElvisModel model = load_model(kv, seed);
  const std::string id = kv.get_string("sample", "");
  const std::string query = kv.get_string("query", "");
  const int sentence = kv.get_int("sentence", -1);
  const bool upsample = kv.get_bool("upsample", false);
  kv.reject_unknown();
  require(!id.empty(), "missing sample id (set sample=<id>)");

  const Dataset data = read_dataset(dataset);
  const auto it = std::find_if(data.samples.begin(), data.samples.end(), [&](const auto& s) { return s.id == id; });
  require(it != data.samples.end(), "sample " + id + " is not in the dataset (key sample)");
  const ModelConfig& mc = model.config();
  const auto image = project_local(model.image_locals(patch_features(it->image, mc.grid_shape())),
                                   model.head(Modality::Image));
  Eigen::VectorXd q;
  if (!query.empty()) {
    q = project_local(model.text_locals(sentence_features({query}, mc.hash_dim, 1)), model.head(Modality::Text))
            .vectors.row(0)
            .transpose();
  } else if (sentence >= 0) {
    require(sentence < static_cast<int>(it->report.sentences.size()), "sentence index out of range (key sentence)");
    q = project_local(model.text_locals(sentence_features({it->report.sentences[sentence]}, mc.hash_dim, 1)),
                      model.head(Modality::Text))
            .vectors.row(0)
            .transpose();
  } else {
    // No query: intra-image similarity to the centre cell.
    q = image.vectors.row(image.size() / 2).transpose();
  }
  HeatmapOptions opts;
  if (upsample) opts.upsample = std::pair{it->image.height, it->image.width};
  const fs::path dir = out_dir(c);
  const HeatmapFiles files = export_heatmap(similarity_map(q, image).values, dir / (id + ".pgm"), opts);
  write_run_manifest(dir, "export-heatmap", kv, seed);
  out << "wrote " << files.pgm.string() << "\n";
  return kExitOk;
}

// Every entry costs two full forwards, so the check runs at reduced widths.
ModelConfig gradcheck_model_config() {
  ModelConfig mc;
  mc.hash_dim = 32;
  mc.hidden = 8;
  mc.image_dim = 8;
  mc.text_dim = 8;
  mc.joint_dim = 6;
  mc.pool_key_dim = 6;
  return mc;
}

int grad_check(const Common& c, std::ostream& out) {
  KeyValues kv = resolve(c);
  TrainConfig tc;
  ModelConfig mc = gradcheck_model_config();
  // A blocked target is a constant to the tape but not to finite differences.
  tc.loss.target_gradient_blocked = false;
  read_config(kv, tc);
  read_config(kv, mc);
  const double tolerance = kv.get_double("tolerance", 1e-4);
  const double step = kv.get_double("step", 1e-5);
  kv.reject_unknown();
  require(!mc.external_features, "grad-check runs on the toy encoders");

  SyntheticWorldConfig world;
  world.seed = tc.seed;
  world.grid = mc.grid;
  world.max_sentences = mc.max_sentences;
  const auto samples = generate_samples(world, 0, 2);
  std::vector<PairInput> inputs;
  for (const auto& s : samples) inputs.push_back(make_input(s, mc));
  ElvisModel model = ElvisModel::init(mc, tc.seed);
  std::vector<ag::Parameter*> params;
  for (auto& p : model.parameters()) params.push_back(&p);
  const GradCheckReport report = gradient_check(
      [&](ag::Tape& tape) {
        return record_batch(tape, model, {&inputs[0], &inputs[1]}, tc.loss).total;
      },
      params, step);

  std::ostringstream text;
  for (const auto& e : report.per_parameter)
    text << e.parameter << " max_rel_error " << e.rel_error << " at (" << e.row << "," << e.col << ")\n";
  text << "checked " << report.checked << " entries; max_rel_error " << report.max_rel_error << " (" << report.worst.parameter
       << ")\n";
  const fs::path dir = out_dir(c);
  io::write_file_atomic(dir / "gradcheck.txt", text.str());
  KeyValues resolved;
  write_config(resolved, tc);
  write_config(resolved, mc);
  write_run_manifest(dir, "grad-check", resolved, tc.seed);
  out << text.str();
  if (!report.passed(tolerance)) {
    out << "gradient check FAILED (tolerance " << tolerance << ")\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Local/global contrastive vision-language pre-training on synthetic data"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config, "key=value configuration file");
    sub->add_option("--set", common.overrides, "override one key (key=value); repeatable")->allow_extra_args(false);
    sub->add_option("--seed", common.seed, "random seed");
    sub->add_option("--out", common.out, "output directory (default $ELVIS_OUT or ./elvis-out)");
    sub->add_option("--workers", common.workers, "data-loading threads")->check(CLI::PositiveNumber);
  };
  struct Entry {
    const char* name;
    const char* help;
    int (*fn)(const Common&, std::ostream&);
  };
  const Entry entries[] = {
      {"gen-data", "generate a synthetic paired dataset", gen_data},
      {"pretrain", "pre-train on a dataset directory", pretrain},
      {"eval-grounding", "phrase-grounding CNR report", eval_grounding},
      {"eval-segmentation", "linear-probe segmentation Dice", eval_segmentation},
      {"export-heatmap", "write a similarity heatmap", export_heatmap_cmd},
      {"grad-check", "finite-difference gradient check", grad_check},
  };
  for (const auto& e : entries) add_common(app.add_subcommand(e.name, e.help));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }

  for (const auto& e : entries) {
    if (!app.got_subcommand(e.name)) continue;
    try {
      return e.fn(common, out);
    } catch (const ContractError& ex) {
      err << "error: " << ex.what() << "\n";
      return kExitInvalid;
    } catch (const std::exception& ex) {
      err << "runtime failure: " << ex.what() << "\n";
      return kExitRuntime;
    }
  }
  return kExitInvalid;
}

}  // namespace elvis::cli
