#include "mdet/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace mdet {

LossMode parse_loss_mode(const std::string& name) {
  if (name == "plain") return LossMode::Plain;
  if (name == "weighted") return LossMode::Weighted;
  if (name == "soft") return LossMode::Soft;
  throw std::invalid_argument("unknown loss mode '" + name + "' (expected plain, weighted or soft)");
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::Plain: return "plain";
    case LossMode::Weighted: return "weighted";
    case LossMode::Soft: return "soft";
  }
  return "?";
}

void LossConfig::check(bool for_tagger) const {
  if (mode == LossMode::Weighted && !(w > 0.0 && w <= 1.0)) {
    throw std::invalid_argument("weighted loss needs w in (0, 1], got " + std::to_string(w));
  }
  if (mode == LossMode::Soft) {
    if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("soft targets need rho in [0, 1)");
    if (for_tagger && !(1.0 - 3.0 * rho > 0.0)) {
      throw std::invalid_argument("tagger soft targets need 1 - 3 rho > 0, got rho = " + std::to_string(rho));
    }
  }
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
}

std::array<double, kNumTagSymbols> tagger_soft_target(double rho) { return {rho, rho, rho, 1.0 - 3.0 * rho}; }

Tensor tagger_loss_coefficients(const std::vector<TagSymbol>& gold, const LossConfig& cfg) {
  const int t = static_cast<int>(gold.size());
  Tensor coef({t, kNumTagSymbols});
  for (int k = 0; k < t; ++k) {
    double* row = coef.data.data() + static_cast<std::size_t>(k) * kNumTagSymbols;
    const int y = static_cast<int>(gold[k]);
    if (gold[k] != TagSymbol::AdvanceOut || cfg.mode == LossMode::Plain) {
      row[y] = 1.0;
    } else if (cfg.mode == LossMode::Weighted) {
      row[y] = cfg.w;
    } else {
      const auto target = tagger_soft_target(cfg.rho);
      for (int c = 0; c < kNumTagSymbols; ++c) row[c] = target[c];
    }
  }
  return coef;
}

Var tagger_loss(Graph& g, const std::vector<TaggerStep>& steps, const std::vector<TagSymbol>& gold,
                const LossConfig& cfg) {
  if (steps.size() != gold.size() || steps.empty()) {
    throw std::invalid_argument("tagger_loss: " + std::to_string(steps.size()) + " steps for " +
                                std::to_string(gold.size()) + " gold symbols");
  }
  std::vector<Var> rows;
  rows.reserve(steps.size());
  for (const auto& s : steps) rows.push_back(s.log_probs);
  Var weighted = dot(g.constant(tagger_loss_coefficients(gold, cfg)), stack_rows(rows));
  return scale(weighted, -1.0 / static_cast<double>(steps.size()));
}

namespace {

// min over p of -sum_c a_c log p_c is attained at p_c = a_c / sum a.
double cross_entropy_floor(const double* a, int n) {
  double total = 0.0;
  for (int c = 0; c < n; ++c) total += a[c];
  double out = 0.0;
  for (int c = 0; c < n; ++c)
    if (a[c] > 0.0) out -= a[c] * std::log(a[c] / total);
  return out;
}

}  // namespace

double tagger_loss_floor(const std::vector<TagSymbol>& gold, const LossConfig& cfg) {
  if (gold.empty()) throw std::invalid_argument("tagger_loss_floor: empty sequence");
  const Tensor coef = tagger_loss_coefficients(gold, cfg);
  double out = 0.0;
  for (std::size_t t = 0; t < gold.size(); ++t) out += cross_entropy_floor(&coef.data[t * kNumTagSymbols], kNumTagSymbols);
  return out / static_cast<double>(gold.size());
}

SpanLossCoefficients span_loss_coefficients(const std::vector<double>& labels, const LossConfig& cfg) {
  const int n = static_cast<int>(labels.size());
  SpanLossCoefficients c{Tensor({n}), Tensor({n})};
  for (int k = 0; k < n; ++k) {
    const double y = labels[k];
    if (!(y >= 0.0 && y <= 1.0)) throw std::invalid_argument("span label " + std::to_string(y) + " outside [0, 1]");
    if (y != 0.0 || cfg.mode == LossMode::Plain) {
      c.on_log_p[k] = y;
      c.on_log_not_p[k] = 1.0 - y;
    } else if (cfg.mode == LossMode::Weighted) {
      c.on_log_p[k] = 0.0;
      c.on_log_not_p[k] = cfg.w;
    } else {
      c.on_log_p[k] = cfg.rho;
      c.on_log_not_p[k] = 1.0 - cfg.rho;
    }
  }
  return c;
}

double span_loss_floor(const std::vector<double>& labels, const LossConfig& cfg) {
  if (labels.empty()) throw std::invalid_argument("span_loss_floor: no labels");
  const SpanLossCoefficients c = span_loss_coefficients(labels, cfg);
  double out = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const double a[2] = {c.on_log_p[k], c.on_log_not_p[k]};
    out += cross_entropy_floor(a, 2);
  }
  return out / static_cast<double>(labels.size());
}

namespace {

Var span_loss_impl(Graph& g, Var log_p, Var log_not_p, const std::vector<double>& labels, const LossConfig& cfg) {
  if (log_p.size() != labels.size() || labels.empty()) {
    throw std::invalid_argument("span_loss: " + std::to_string(log_p.size()) + " scores for " +
                                std::to_string(labels.size()) + " labels");
  }
  SpanLossCoefficients c = span_loss_coefficients(labels, cfg);
  Var total = add(dot(g.constant(std::move(c.on_log_p)), log_p), dot(g.constant(std::move(c.on_log_not_p)), log_not_p));
  return scale(total, -1.0 / static_cast<double>(labels.size()));
}

}  // namespace

Var span_loss(Graph& g, Var probs, const std::vector<double>& labels, const LossConfig& cfg) {
  return span_loss_impl(g, log(probs), log(add_scalar(scale(probs, -1.0), 1.0)), labels, cfg);
}

Var span_loss_from_logits(Graph& g, Var logits, const std::vector<double>& labels, const LossConfig& cfg) {
  return span_loss_impl(g, log_sigmoid(logits), log_sigmoid(scale(logits, -1.0)), labels, cfg);
}

double span_loss_term(double p, double label, const LossConfig& cfg) {
  SpanLossCoefficients c = span_loss_coefficients({label}, cfg);
  return -(c.on_log_p[0] * std::log(p) + c.on_log_not_p[0] * std::log(1.0 - p));
}

MultitaskParams MultitaskParams::create(ParamStore& store, const std::string& name) {
  MultitaskParams p;
  p.s_md = &store.add(name + ".s_md", {});
  p.s_cr = &store.add(name + ".s_cr", {});
  return p;
}

Var multitask_combine(Graph& g, Var l_md, Var l_cr, const MultitaskParams& params) {
  Var s_md = g.param(*params.s_md);
  Var s_cr = g.param(*params.s_cr);
  l_md = reshape(l_md, {});
  l_cr = reshape(l_cr, {});
  Var total = add(mul(exp(scale(s_md, -1.0)), l_md), scale(s_md, 0.5));
  total = add(total, mul(exp(scale(s_cr, -1.0)), l_cr));
  return add(total, scale(s_cr, 0.5));
}

double multitask_combine_value(double l_md, double l_cr, double s_md, double s_cr) {
  double total = std::exp(-1.0 * s_md) * l_md + 0.5 * s_md;
  total = total + std::exp(-1.0 * s_cr) * l_cr;
  return total + 0.5 * s_cr;
}

}  // namespace mdet
