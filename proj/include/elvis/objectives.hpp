#pragma once

#include "elvis/autograd.hpp"
#include "elvis/core/losses.hpp"

#include <array>
#include <functional>
#include <string>
#include <vector>

namespace elvis {

struct LossConfig {
  double tau_g = 0.3;
  double tau_l_src = 0.3;
  double tau_l_tgt = 0.1;
  /// Weights of (global image|text, global text|image, local image, local text).
  std::array<double, 4> lambdas{0.25, 0.75, 0.375, 0.375};
  bool target_gradient_blocked = true;
  Reduction reduction = Reduction::Sum;
  bool mask_self_similarity_diagonal = false;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

struct LossBundle {
  double global_img_given_txt = 0;
  double global_txt_given_img = 0;
  double local_image = 0;
  double local_text = 0;
  double total = 0;
  int batch_size = 0;

  std::array<double, 4> components() const {
    return {global_img_given_txt, global_txt_given_img, local_image, local_text};
  }
};

/// lambda . components, accumulated left to right from 0 (the same order as the graph).
double total_loss(const std::array<double, 4>& components, const std::array<double, 4>& lambdas);

/// Fills `total` from the components and validates finiteness.
void finalize(LossBundle& bundle, const LossConfig& cfg);

/// Pure local loss of one modality of one sample: targets from y, predictions from z and z_cross.
double local_loss(const LocalEmbeddings<double>& y, const LocalEmbeddings<double>& z,
                  const LocalEmbeddings<double>& z_cross, const LossConfig& cfg);

namespace graph {

/// Global InfoNCE pair on B x D projected globals: (image|text, text|image).
std::pair<ag::Var, ag::Var> global_losses(const ag::Var& image_globals, const ag::Var& text_globals, double tau);

/// Row and column target distributions from the intra-modal similarity of y.
/// With a blocked target these are tape constants.
std::pair<ag::Var, ag::Var> intra_modal_target(const ag::Var& y, const LossConfig& cfg);

/// Local cross-entropy of one sample given target maps from intra_modal_target.
ag::Var local_loss(const ag::Var& z, const ag::Var& z_cross, const ag::Var& p_row, const ag::Var& p_col,
                   const LossConfig& cfg);

ag::Var total(const std::array<ag::Var, 4>& components, const LossConfig& cfg);

}  // namespace graph

struct GradCheckEntry {
  std::string parameter;
  Index row = 0, col = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  GradCheckEntry worst;
  std::size_t checked = 0;
  /// Largest error per parameter tensor, in the order given.
  std::vector<GradCheckEntry> per_parameter;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Central finite differences against reverse-mode gradients for every entry of
/// every parameter. `build` records the loss on the supplied tape; it is called
/// once for the analytic pass and twice per entry.
GradCheckReport gradient_check(const std::function<ag::Var(ag::Tape&)>& build,
                               const std::vector<ag::Parameter*>& params, double step = 1e-5,
                               double floor = 1e-3);

}  // namespace elvis
