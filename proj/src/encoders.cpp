#include "elvis/encoders.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace elvis {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

bool has_content(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; });
}

// Lower-case word immediately preceding position `dot` (inclusive of inner dots).
std::string word_before(std::string_view text, std::size_t dot) {
  std::size_t b = dot;
  while (b > 0 && !is_space(text[b - 1])) --b;
  std::string w(text.substr(b, dot - b + 1));
  std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
  return w;
}

constexpr std::array<std::string_view, 7> kAbbreviations = {"e.g.", "i.e.", "vs.", "approx.", "cf.", "dr.", "etc."};

}  // namespace

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!is_terminal(text[i])) continue;
    // Absorb runs such as "?!" or "...".
    std::size_t end = i;
    while (end + 1 < text.size() && is_terminal(text[end + 1])) ++end;
    const bool boundary = end + 1 == text.size() || is_space(text[end + 1]);
    if (!boundary) {
      i = end;
      continue;
    }
    if (text[end] == '.' && end == i) {
      const std::string w = word_before(text, i);
      if (std::find(kAbbreviations.begin(), kAbbreviations.end(), w) != kAbbreviations.end()) {
        i = end;
        continue;
      }
    }
    std::string sentence = trim(text.substr(start, end + 1 - start));
    if (has_content(sentence)) out.push_back(std::move(sentence));
    start = end + 1;
    i = end;
  }
  std::string tail = trim(text.substr(std::min(start, text.size())));
  if (has_content(tail)) out.push_back(std::move(tail));
  require(!out.empty(), "split_sentences: report yields no sentences");
  return out;
}

Report make_report(std::string raw_text) {
  Report r;
  r.sentences = split_sentences(raw_text);
  r.raw_text = std::move(raw_text);
  return r;
}

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : sentence) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Eigen::MatrixXd patch_features(const ImageTensor& image, GridShape grid) {
  require(grid.rows > 0 && grid.cols > 0, "patch_features: empty grid");
  require(image.height % grid.rows == 0 && image.width % grid.cols == 0,
          "patch_features: image size not divisible into the grid");
  require(image.data.size() == static_cast<std::size_t>(image.channels) * image.height * image.width,
          "patch_features: image buffer size mismatch");
  const int ph = image.height / static_cast<int>(grid.rows);
  const int pw = image.width / static_cast<int>(grid.cols);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(grid.cells(), image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) out((y / ph) * grid.cols + x / pw, c) += image.at(c, y, x);
  out /= static_cast<double>(ph * pw);
  return out;
}

Eigen::MatrixXd sentence_features(const std::vector<std::string>& sentences, int hash_dim, int max_sentences) {
  require(hash_dim > 0, "sentence_features: empty vocabulary hash range");
  require(!sentences.empty(), "sentence_features: report has no sentences");
  require(static_cast<int>(sentences.size()) <= max_sentences, "sentence_features: more sentences than max_sentences");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(max_sentences, hash_dim);
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    for (const auto& tok : tokenize(sentences[k])) out(static_cast<Index>(k), static_cast<Index>(fnv1a(tok) % hash_dim)) += 1.0;
    const double n = out.row(static_cast<Index>(k)).norm();
    if (n > 0.0) out.row(static_cast<Index>(k)) /= n;
  }
  return out;
}

LocalEmbeddings<double> encode_image_toy(const ImageTensor& image, GridShape grid, const ToyEncoder<double>& encoder) {
  return LocalEmbeddings<double>::image(encoder(patch_features(image, grid)), grid);
}

LocalEmbeddings<double> encode_text_toy(const Report& report, int hash_dim, int max_sentences,
                                        const ToyEncoder<double>& encoder) {
  const Eigen::MatrixXd x = sentence_features(report.sentences, hash_dim, max_sentences);
  Mask mask = Mask::Constant(max_sentences, false);
  mask.head(static_cast<Index>(report.sentences.size())).setConstant(true);
  return LocalEmbeddings<double>::text(encoder(x), std::move(mask));
}

}  // namespace elvis
