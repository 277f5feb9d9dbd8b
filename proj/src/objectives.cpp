#include "elvis/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace elvis {

void LossConfig::validate() const {
  require(tau_g > 0 && std::isfinite(tau_g), "loss.tau_g must be positive");
  require(tau_l_src > 0 && std::isfinite(tau_l_src), "loss.tau_l_src must be positive");
  require(tau_l_tgt > 0 && std::isfinite(tau_l_tgt), "loss.tau_l_tgt must be positive");
  for (double l : lambdas) require(std::isfinite(l) && l >= 0, "loss.lambdas must be finite and non-negative");
}

double total_loss(const std::array<double, 4>& components, const std::array<double, 4>& lambdas) {
  double t = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    require(std::isfinite(components[k]), "total_loss: non-finite loss component");
    t += lambdas[k] * components[k];
  }
  return t;
}

void finalize(LossBundle& bundle, const LossConfig& cfg) {
  bundle.total = total_loss(bundle.components(), cfg.lambdas);
}

double local_loss(const LocalEmbeddings<double>& y, const LocalEmbeddings<double>& z,
                  const LocalEmbeddings<double>& z_cross, const LossConfig& cfg) {
  const auto [p_row, p_col] = intra_modal_target(y, cfg.tau_l_tgt, cfg.mask_self_similarity_diagonal);
  return local_contrastive_loss(z, z_cross, p_row, p_col, cfg.tau_l_src, cfg.reduction,
                                cfg.mask_self_similarity_diagonal);
}

namespace graph {

namespace {

ag::Var diagonal_masked(const ag::Var& s) {
  ag::Mat m = ag::Mat::Zero(s.rows(), s.cols());
  m.diagonal().setConstant(-1e30);
  return ag::add(s, s.tape()->constant(std::move(m)));
}

// Row and column temperature softmax of a similarity node.
std::pair<ag::Var, ag::Var> softmax_pair(const ag::Var& s, double tau, bool mask_diagonal) {
  ag::Var logits = ag::scale(s, 1.0 / tau);
  if (mask_diagonal) logits = diagonal_masked(logits);
  return {ag::row_softmax(logits), ag::transpose(ag::row_softmax(ag::transpose(logits)))};
}

}  // namespace

std::pair<ag::Var, ag::Var> global_losses(const ag::Var& image_globals, const ag::Var& text_globals, double tau) {
  require(image_globals.rows() >= 1, "global loss: empty batch");
  require(image_globals.rows() == text_globals.rows(), "global loss: batch size mismatch");
  const ag::Var logits = ag::scale(ag::pairwise_cosine(image_globals, text_globals), 1.0 / tau);
  require(logits.value().allFinite(), "global loss: non-finite similarity");
  return {ag::infonce_rows(logits), ag::infonce_rows(ag::transpose(logits))};
}

std::pair<ag::Var, ag::Var> intra_modal_target(const ag::Var& y, const LossConfig& cfg) {
  ag::Tape& tape = *y.tape();
  if (cfg.target_gradient_blocked) {
    const auto locals = LocalEmbeddings<double>::text(y.value());
    auto [p_row, p_col] = elvis::intra_modal_target(locals, cfg.tau_l_tgt, cfg.mask_self_similarity_diagonal);
    return {tape.constant(std::move(p_row.values)), tape.constant(std::move(p_col.values))};
  }
  return softmax_pair(ag::pairwise_cosine(y, y), cfg.tau_l_tgt, cfg.mask_self_similarity_diagonal);
}

ag::Var local_loss(const ag::Var& z, const ag::Var& z_cross, const ag::Var& p_row, const ag::Var& p_col,
                   const LossConfig& cfg) {
  require(z.rows() == z_cross.rows(), "local loss: z and cross-attended sizes differ");
  require(p_row.rows() == z.rows() && p_row.cols() == z.rows(), "local loss: target shape mismatch");
  const auto [q_row, q_col] =
      softmax_pair(ag::pairwise_cosine(z, z_cross), cfg.tau_l_src, cfg.mask_self_similarity_diagonal);
  const ag::Var ce = ag::add(ag::sum(ag::mul(p_row, ag::log_eps(q_row, kLogEpsilon))),
                             ag::sum(ag::mul(p_col, ag::log_eps(q_col, kLogEpsilon))));
  const double sign = cfg.reduction == Reduction::Mean ? -1.0 / static_cast<double>(z.rows()) : -1.0;
  return ag::scale(ce, sign);
}

ag::Var total(const std::array<ag::Var, 4>& components, const LossConfig& cfg) {
  return ag::weighted_sum({components.begin(), components.end()}, {cfg.lambdas.begin(), cfg.lambdas.end()});
}

}  // namespace graph

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckReport gradient_check(const std::function<ag::Var(ag::Tape&)>& build,
                               const std::vector<ag::Parameter*>& params, double step, double floor) {
  require(step > 0, "gradient_check: step must be positive");
  for (ag::Parameter* p : params) {
    require(p != nullptr && p->value.allFinite(), "gradient_check: parameters must be finite");
    p->zero_grad();
  }
  {
    ag::Tape tape;
    const ag::Var loss = build(tape);
    require(std::isfinite(loss.scalar()), "gradient_check: non-finite loss");
    tape.backward(loss);
  }

  auto evaluate = [&] {
    ag::Tape tape;
    const double v = build(tape).scalar();
    if (!std::isfinite(v)) throw RuntimeFailure("gradient_check: non-finite loss at a perturbed point");
    return v;
  };

  GradCheckReport report;
  for (ag::Parameter* p : params) {
    GradCheckEntry worst{p->name};
    for (Index j = 0; j < p->value.cols(); ++j)
      for (Index i = 0; i < p->value.rows(); ++i) {
        const double original = p->value(i, j);
        p->value(i, j) = original + step;
        const double plus = evaluate();
        p->value(i, j) = original - step;
        const double minus = evaluate();
        p->value(i, j) = original;
        const double numeric = (plus - minus) / (2.0 * step);
        const double analytic = p->grad(i, j);
        const double err = relative_error(analytic, numeric, floor);
        ++report.checked;
        if (err >= worst.rel_error) worst = {p->name, i, j, analytic, numeric, err};
      }
    report.per_parameter.push_back(worst);
    if (worst.rel_error >= report.max_rel_error) {
      report.max_rel_error = worst.rel_error;
      report.worst = worst;
    }
  }
  return report;
}

}  // namespace elvis
