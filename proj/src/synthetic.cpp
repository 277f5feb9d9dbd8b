#include "elvis/synthetic.hpp"

#include "elvis/io.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

namespace elvis {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<FindingType> SyntheticWorldConfig::default_findings() {
  return {
      {"opacity", {{1, 0, 0}, {0, 1, 1}}},
      {"effusion", {{0, 1, 0}, {1, 0, 1}}},
      {"nodule", {{0, 0, 1}, {1, 1, 0}}},
      {"consolidation", {{1, 1, 1}}},
  };
}

void SyntheticWorldConfig::validate() const {
  require(grid >= 2, "world: grid must be at least 2");
  require(image_size > 0 && image_size % grid == 0, "world: image_size must be a positive multiple of grid");
  require(channels >= 1, "world: channels must be positive");
  require(roi_count_range[0] >= 0 && roi_count_range[0] <= roi_count_range[1], "world: roi_count_range out of order");
  require(roi_size_range[0] >= 1 && roi_size_range[0] <= roi_size_range[1], "world: roi_size_range out of order");
  require(roi_size_range[1] <= grid / 2, "world: ROI larger than grid half");
  require(roi_count_range[1] <= static_cast<int>(findings.size()), "world: more ROIs than finding types");
  require(duplicate_sentence_prob >= 0.0 && duplicate_sentence_prob <= 1.0, "world: duplicate_sentence_prob not in [0,1]");
  require(bilateral_prob >= 0.0 && bilateral_prob <= 1.0, "world: bilateral_prob not in [0,1]");
  require(filler_range[0] >= 0 && filler_range[0] <= filler_range[1], "world: filler_range out of order");
  require(max_sentences >= 1, "world: max_sentences must be positive");
  for (const auto& f : findings) {
    require(!f.name.empty() && !f.appearances.empty(), "world: finding needs a name and an appearance");
    for (const auto& a : f.appearances)
      require(static_cast<int>(a.size()) == channels, "world: appearance length must equal channels");
  }
}

void to_json(json& j, const SyntheticWorldConfig& c) {
  json findings = json::array();
  for (const auto& f : c.findings) findings.push_back({{"name", f.name}, {"appearances", f.appearances}});
  j = json{{"grid", c.grid},
           {"image_size", c.image_size},
           {"channels", c.channels},
           {"roi_count_range", c.roi_count_range},
           {"roi_size_range", c.roi_size_range},
           {"findings", findings},
           {"duplicate_sentence_prob", c.duplicate_sentence_prob},
           {"bilateral_prob", c.bilateral_prob},
           {"filler_range", c.filler_range},
           {"max_sentences", c.max_sentences},
           {"seed", c.seed}};
}

void from_json(const json& j, SyntheticWorldConfig& c) {
  j.at("grid").get_to(c.grid);
  j.at("image_size").get_to(c.image_size);
  j.at("channels").get_to(c.channels);
  j.at("roi_count_range").get_to(c.roi_count_range);
  j.at("roi_size_range").get_to(c.roi_size_range);
  c.findings.clear();
  for (const auto& f : j.at("findings")) c.findings.push_back({f.at("name"), f.at("appearances")});
  j.at("duplicate_sentence_prob").get_to(c.duplicate_sentence_prob);
  j.at("bilateral_prob").get_to(c.bilateral_prob);
  j.at("filler_range").get_to(c.filler_range);
  j.at("max_sentences").get_to(c.max_sentences);
  j.at("seed").get_to(c.seed);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

const std::vector<std::string> kSingleTemplates = {
    "{Name} in the {side} {zone} zone.",
    "There is {name} in the {side} {zone} lung.",
    "{Name} is seen at the {side} {zone} field.",
};
const std::vector<std::string> kBilateralTemplates = {
    "Bilateral {name} in the {zone} zones.",
    "There is {name} in both {zone} lungs.",
};
const std::vector<std::string> kFillers = {
    "The heart size is normal.",          "The mediastinal contours are unremarkable.",
    "The osseous structures are intact.", "No acute bony abnormality.",
    "The trachea is midline.",            "Lung volumes are preserved.",
};

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

std::string render_sentence(const std::string& tmpl, const std::string& name, const std::string& side,
                            const std::string& zone) {
  std::string cap = name;
  cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
  std::string s = replace_all(tmpl, "{Name}", cap);
  s = replace_all(s, "{name}", name);
  s = replace_all(s, "{side}", side);
  return replace_all(s, "{zone}", zone);
}

std::string zone_of(const GridBox& b, int grid) {
  const double center = 0.5 * (b.row0 + b.row1 - 1);
  if (center < grid / 3.0) return "upper";
  if (center >= 2.0 * grid / 3.0) return "lower";
  return "middle";
}

bool overlaps(const GridBox& a, const GridBox& b) {
  return a.row0 < b.row1 && b.row0 < a.row1 && a.col0 < b.col1 && b.col0 < a.col1;
}

struct Finding {
  std::vector<int> boxes;
  std::vector<std::string> sentences;
};

}  // namespace

AlignedSample generate_sample(const SyntheticWorldConfig& cfg, std::uint64_t index) {
  cfg.validate();
  std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(index)));
  auto uniform_int = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto bernoulli = [&rng](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };

  const int g = cfg.grid;
  const int half = g / 2;
  AlignedSample s;
  std::ostringstream id;
  id << 's' << std::setfill('0') << std::setw(6) << index;
  s.id = id.str();
  s.grid = cfg.grid_shape();

  std::vector<int> types(cfg.findings.size());
  for (std::size_t k = 0; k < types.size(); ++k) types[k] = static_cast<int>(k);
  std::shuffle(types.begin(), types.end(), rng);
  const int n_rois = uniform_int(cfg.roi_count_range[0], cfg.roi_count_range[1]);

  std::vector<Finding> findings;
  std::vector<int> box_appearance;
  for (int k = 0; k < n_rois; ++k) {
    const FindingType& type = cfg.findings[types[k]];
    const int appearance = uniform_int(0, static_cast<int>(type.appearances.size()) - 1);
    const bool bilateral = bernoulli(cfg.bilateral_prob);
    const int h = uniform_int(cfg.roi_size_range[0], cfg.roi_size_range[1]);
    const int w = uniform_int(cfg.roi_size_range[0], cfg.roi_size_range[1]);
    const bool left = bernoulli(0.5);

    std::vector<GridBox> placed;
    for (int attempt = 0; attempt < 32 && placed.empty(); ++attempt) {
      GridBox b;
      b.label = type.name;
      b.row0 = uniform_int(0, g - h);
      b.row1 = b.row0 + h;
      b.col0 = left ? uniform_int(0, half - w) : uniform_int(g - half, g - w);
      b.col1 = b.col0 + w;
      std::vector<GridBox> candidate{b};
      if (bilateral) {
        GridBox m = b;
        m.col0 = g - b.col1;
        m.col1 = g - b.col0;
        candidate.push_back(m);
      }
      const bool clash = std::any_of(candidate.begin(), candidate.end(), [&](const GridBox& c) {
        return std::any_of(s.boxes.begin(), s.boxes.end(), [&](const GridBox& e) { return overlaps(c, e); });
      });
      if (!clash) placed = candidate;
    }
    if (placed.empty()) continue;

    Finding f;
    for (const auto& b : placed) {
      f.boxes.push_back(static_cast<int>(s.boxes.size()));
      s.boxes.push_back(b);
      box_appearance.push_back(appearance);
    }
    const auto& templates = bilateral ? kBilateralTemplates : kSingleTemplates;
    const std::string side = left ? "left" : "right";
    const std::string zone = zone_of(placed.front(), g);
    const int t0 = uniform_int(0, static_cast<int>(templates.size()) - 1);
    f.sentences.push_back(render_sentence(templates[t0], type.name, side, zone));
    if (bernoulli(cfg.duplicate_sentence_prob)) {
      const int t1 = (t0 + uniform_int(1, static_cast<int>(templates.size()) - 1)) % static_cast<int>(templates.size());
      f.sentences.push_back(render_sentence(templates[t1], type.name, side, zone));
    }
    findings.push_back(std::move(f));
  }

  // Sentence budget: drop redundant duplicates first, then filler.
  int n_fill = uniform_int(cfg.filler_range[0], cfg.filler_range[1]);
  auto count_finding_sentences = [&] {
    int n = 0;
    for (const auto& f : findings) n += static_cast<int>(f.sentences.size());
    return n;
  };
  for (auto it = findings.rbegin(); it != findings.rend() && count_finding_sentences() + n_fill > cfg.max_sentences; ++it)
    if (it->sentences.size() > 1) it->sentences.pop_back();
  while (findings.size() > 0 && count_finding_sentences() > cfg.max_sentences) {
    for (int b : findings.back().boxes) s.boxes[b].label.clear();
    findings.pop_back();
  }
  n_fill = std::min(n_fill, cfg.max_sentences - count_finding_sentences());
  if (count_finding_sentences() == 0) n_fill = std::max(n_fill, 1);

  std::vector<std::string> fillers = kFillers;
  std::shuffle(fillers.begin(), fillers.end(), rng);

  std::vector<std::pair<std::string, std::vector<int>>> sentences;
  for (const auto& f : findings)
    for (const auto& text : f.sentences) sentences.emplace_back(text, f.boxes);
  for (int k = 0; k < n_fill; ++k) sentences.emplace_back(fillers[static_cast<std::size_t>(k) % fillers.size()], std::vector<int>{});
  std::shuffle(sentences.begin(), sentences.end(), rng);

  // Render: uniform background noise, then bright findings in their signature channels.
  const int size = cfg.image_size;
  const int patch = size / g;
  s.image = ImageTensor(cfg.channels, size, size);
  std::uniform_real_distribution<float> noise(0.0f, 0.1f);
  std::uniform_real_distribution<float> bright(0.7f, 1.0f);
  for (float& v : s.image.data) v = noise(rng);
  for (std::size_t b = 0; b < s.boxes.size(); ++b) {
    const GridBox& box = s.boxes[b];
    if (box.label.empty()) continue;
    const auto type = std::find_if(cfg.findings.begin(), cfg.findings.end(),
                                   [&](const FindingType& f) { return f.name == box.label; });
    const auto& signature = type->appearances[static_cast<std::size_t>(box_appearance[b])];
    for (int y = box.row0 * patch; y < box.row1 * patch; ++y)
      for (int x = box.col0 * patch; x < box.col1 * patch; ++x) {
        const float v = bright(rng);
        for (int c = 0; c < cfg.channels; ++c)
          if (signature[static_cast<std::size_t>(c)]) s.image.at(c, y, x) = v;
      }
  }

  // Drop boxes removed by the sentence budget and renumber.
  std::vector<int> remap(s.boxes.size(), -1);
  std::vector<GridBox> kept;
  for (std::size_t b = 0; b < s.boxes.size(); ++b)
    if (!s.boxes[b].label.empty()) {
      remap[b] = static_cast<int>(kept.size());
      kept.push_back(s.boxes[b]);
    }
  s.boxes = std::move(kept);

  std::string raw;
  for (const auto& [text, boxes] : sentences) {
    if (!raw.empty()) raw += ' ';
    raw += text;
    s.report.sentences.push_back(text);
    std::vector<int> mapped;
    for (int b : boxes) mapped.push_back(remap[static_cast<std::size_t>(b)]);
    s.sentence_boxes.push_back(std::move(mapped));
  }
  s.report.raw_text = raw;
  if (split_sentences(raw) != s.report.sentences) throw RuntimeFailure("generate_sample: sentence splitter disagrees with generator");
  return s;
}

std::vector<AlignedSample> generate_samples(const SyntheticWorldConfig& cfg, std::uint64_t first, std::size_t count) {
  std::vector<AlignedSample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(generate_sample(cfg, first + k));
  return out;
}

Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> AlignedSample::gt_alignment() const {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> a =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(static_cast<Index>(sentence_boxes.size()), grid.cells(), false);
  for (std::size_t k = 0; k < sentence_boxes.size(); ++k)
    for (int b : sentence_boxes[k])
      for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c)
          if (boxes[static_cast<std::size_t>(b)].contains_cell(r, c)) a(static_cast<Index>(k), r * grid.cols + c) = true;
  return a;
}

Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> pixel_mask(const AlignedSample& s, const std::vector<std::string>& labels) {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> m =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(s.image.height, s.image.width, false);
  const int ph = s.image.height / static_cast<int>(s.grid.rows);
  const int pw = s.image.width / static_cast<int>(s.grid.cols);
  for (const auto& b : s.boxes) {
    if (!labels.empty() && std::find(labels.begin(), labels.end(), b.label) == labels.end()) continue;
    m.block(b.row0 * ph, b.col0 * pw, (b.row1 - b.row0) * ph, (b.col1 - b.col0) * pw).setConstant(true);
  }
  return m;
}

std::string boxes_to_csv(const std::vector<GridBox>& boxes) {
  std::ostringstream out;
  out << "row0,col0,row1,col1,label\n";
  for (const auto& b : boxes) out << b.row0 << ',' << b.col0 << ',' << b.row1 << ',' << b.col1 << ',' << b.label << '\n';
  return out.str();
}

std::vector<GridBox> boxes_from_csv(const std::string& text, const std::string& what) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "row0,col0,row1,col1,label")
    throw RuntimeFailure(what + ": boxes file lacks the row0,col0,row1,col1,label header");
  std::vector<GridBox> boxes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    GridBox b;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(fields >> b.row0 >> c1 >> b.col0 >> c2 >> b.row1 >> c3 >> b.col1 >> c4) || c1 != ',' || c2 != ',' || c3 != ',' ||
        c4 != ',')
      throw RuntimeFailure(what + ": malformed box row '" + line + "'");
    std::getline(fields, b.label);
    if (b.row1 <= b.row0 || b.col1 <= b.col0) throw RuntimeFailure(what + ": empty box '" + line + "'");
    boxes.push_back(std::move(b));
  }
  return boxes;
}

namespace {

io::TensorF32 image_to_tensor(const ImageTensor& img) {
  io::TensorF32 t;
  t.dims = {static_cast<std::uint32_t>(img.channels), static_cast<std::uint32_t>(img.height),
            static_cast<std::uint32_t>(img.width)};
  t.data = img.data;
  return t;
}

std::string hex(std::uint32_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(8) << std::setfill('0') << v;
  return out.str();
}

std::string checked_read(const fs::path& dir, const json& entry, const std::string& key, const std::string& id) {
  const fs::path path = dir / entry.at(key).get<std::string>();
  if (!fs::exists(path)) throw RuntimeFailure("sample " + id + ": missing file " + path.string());
  std::string bytes = io::read_file(path);
  if (entry.contains("crc32") && entry.at("crc32").contains(key) && entry.at("crc32").at(key).get<std::string>() != hex(io::crc32(bytes)))
    throw RuntimeFailure("sample " + id + ": checksum mismatch for " + path.string());
  return bytes;
}

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw RuntimeFailure("dataset " + dir.string() + ": manifest.json not found");
  json m;
  try {
    m = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw RuntimeFailure("dataset " + dir.string() + ": malformed manifest (" + e.what() + ")");
  }
  if (!m.is_object() || !m.contains("samples") || !m.at("samples").is_array())
    throw RuntimeFailure("dataset " + dir.string() + ": malformed manifest (no samples array)");
  if (m.contains("count") && m.at("count").get<std::size_t>() != m.at("samples").size())
    throw RuntimeFailure("dataset " + dir.string() + ": manifest count does not match its sample list");
  return m;
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& data) {
  json samples = json::array();
  for (const auto& s : data.samples) {
    const std::string image = io::encode_tensor(image_to_tensor(s.image));
    const std::string report = s.report.raw_text;
    const std::string boxes = boxes_to_csv(s.boxes);
    io::write_file_atomic(dir / "images" / (s.id + ".f32"), image);
    io::write_file_atomic(dir / "reports" / (s.id + ".txt"), report);
    io::write_file_atomic(dir / "boxes" / (s.id + ".csv"), boxes);
    samples.push_back({{"id", s.id},
                       {"image", "images/" + s.id + ".f32"},
                       {"report", "reports/" + s.id + ".txt"},
                       {"boxes", "boxes/" + s.id + ".csv"},
                       {"sentence_boxes", s.sentence_boxes},
                       {"crc32", {{"image", hex(io::crc32(image))}, {"report", hex(io::crc32(report))}, {"boxes", hex(io::crc32(boxes))}}}});
  }
  json manifest{{"format", "elvis-dataset"},
                {"version", 1},
                {"grid", {data.grid.rows, data.grid.cols}},
                {"count", data.samples.size()},
                {"samples", samples}};
  if (data.world) manifest["world"] = *data.world;
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  const json m = read_manifest(dir);
  Dataset data;
  data.grid = {m.at("grid").at(0).get<Index>(), m.at("grid").at(1).get<Index>()};
  if (m.contains("world")) data.world = m.at("world").get<SyntheticWorldConfig>();

  const std::size_t count = m.at("samples").size();
  std::size_t on_disk = 0;
  if (fs::exists(dir / "images"))
    for (const auto& e : fs::directory_iterator(dir / "images"))
      if (e.path().extension() == ".f32") ++on_disk;
  if (on_disk != count)
    throw RuntimeFailure("dataset " + dir.string() + ": manifest lists " + std::to_string(count) + " samples but " +
                         std::to_string(on_disk) + " image files are on disk");

  for (const auto& entry : m.at("samples")) {
    AlignedSample s;
    s.id = entry.at("id").get<std::string>();
    s.grid = data.grid;
    const io::TensorF32 t = io::decode_tensor(checked_read(dir, entry, "image", s.id), "sample " + s.id);
    s.image.channels = static_cast<int>(t.dims[0]);
    s.image.height = static_cast<int>(t.dims[1]);
    s.image.width = static_cast<int>(t.dims[2]);
    s.image.data = t.data;
    try {
      s.report = make_report(checked_read(dir, entry, "report", s.id));
    } catch (const ContractError& e) {
      throw RuntimeFailure("sample " + s.id + ": " + e.what());
    }
    s.boxes = boxes_from_csv(checked_read(dir, entry, "boxes", s.id), "sample " + s.id);
    if (entry.contains("sentence_boxes")) {
      s.sentence_boxes = entry.at("sentence_boxes").get<std::vector<std::vector<int>>>();
    } else {
      s.sentence_boxes.assign(s.report.sentences.size(), {});
    }
    if (s.sentence_boxes.size() != s.report.sentences.size())
      throw RuntimeFailure("sample " + s.id + ": sentence_boxes length differs from the report's sentence count");
    for (const auto& b : s.boxes)
      if (b.row0 < 0 || b.col0 < 0 || b.row1 > data.grid.rows || b.col1 > data.grid.cols)
        throw RuntimeFailure("sample " + s.id + ": box outside the grid");
    data.samples.push_back(std::move(s));
  }
  return data;
}

ExternalFeatures load_external_features(const fs::path& dir) {
  const json m = read_manifest(dir);
  ExternalFeatures out;
  Index image_dim = -1, text_dim = -1;
  for (const auto& entry : m.at("samples")) {
    const std::string id = entry.at("id").get<std::string>();
    const fs::path img_path = dir / "features" / (id + ".img.f32");
    const fs::path txt_path = dir / "features" / (id + ".txt.f32");
    if (!fs::exists(img_path) || !fs::exists(txt_path))
      throw RuntimeFailure("sample " + id + ": missing pair member (need " + img_path.filename().string() + " and " +
                           txt_path.filename().string() + ")");
    const io::TensorF32 img = io::read_tensor(img_path, "sample " + id + " image features");
    const io::TensorF32 txt = io::read_tensor(txt_path, "sample " + id + " text features");
    if (txt.dims[0] == 0) throw RuntimeFailure("sample " + id + ": report features have 0 sentences");
    if (img.dims[0] == 0 || img.dims[1] == 0) throw RuntimeFailure("sample " + id + ": empty image feature grid");
    const Index di = img.dims[2], dt = txt.dims[1];
    if (image_dim < 0) image_dim = di, text_dim = dt;
    if (di != image_dim) throw RuntimeFailure("sample " + id + ": image feature dimension inconsistent across samples");
    if (dt != text_dim) throw RuntimeFailure("sample " + id + ": text feature dimension inconsistent across samples");

    const Index cells = static_cast<Index>(img.dims[0]) * img.dims[1];
    Eigen::MatrixXd yi(cells, di), yt(static_cast<Index>(txt.dims[0]), dt);
    for (Index i = 0; i < cells; ++i)
      for (Index d = 0; d < di; ++d) yi(i, d) = img.data[static_cast<std::size_t>(i * di + d)];
    for (Index i = 0; i < yt.rows(); ++i)
      for (Index d = 0; d < dt; ++d) yt(i, d) = txt.data[static_cast<std::size_t>(i * dt + d)];
    try {
      out.image.push_back(LocalEmbeddings<double>::image(std::move(yi), {img.dims[0], img.dims[1]}));
      out.text.push_back(LocalEmbeddings<double>::text(std::move(yt)));
    } catch (const ContractError& e) {
      throw RuntimeFailure("sample " + id + ": " + e.what());
    }
    out.ids.push_back(id);
  }
  return out;
}

void write_external_features(const fs::path& dir, const ExternalFeatures& f) {
  json samples = json::array();
  for (std::size_t k = 0; k < f.ids.size(); ++k) {
    const auto& yi = f.image[k];
    const auto& yt = f.text[k];
    io::TensorF32 img, txt;
    img.dims = {static_cast<std::uint32_t>(yi.grid->rows), static_cast<std::uint32_t>(yi.grid->cols),
                static_cast<std::uint32_t>(yi.dim())};
    for (Index i = 0; i < yi.size(); ++i)
      for (Index d = 0; d < yi.dim(); ++d) img.data.push_back(static_cast<float>(yi.vectors(i, d)));
    const Eigen::MatrixXd valid = yt.valid_rows();
    txt.dims = {static_cast<std::uint32_t>(valid.rows()), static_cast<std::uint32_t>(valid.cols()), 1};
    for (Index i = 0; i < valid.rows(); ++i)
      for (Index d = 0; d < valid.cols(); ++d) txt.data.push_back(static_cast<float>(valid(i, d)));
    io::write_tensor(dir / "features" / (f.ids[k] + ".img.f32"), img);
    io::write_tensor(dir / "features" / (f.ids[k] + ".txt.f32"), txt);
    samples.push_back({{"id", f.ids[k]}});
  }
  json manifest{{"format", "elvis-features"}, {"version", 1}, {"count", f.ids.size()}, {"samples", samples}};
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace elvis
