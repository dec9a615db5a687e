#pragma once

// Training losses for both detectors, with the two partial-annotation
// modifications, and the uncertainty-weighted multitask combiner.
//
// Negative examples are decoder steps whose gold symbol is "-" (tagger) and
// spans labelled 0 (span scorer).
//   weighted: every negative term is multiplied by w.
//   soft:     negatives get a soft target; (rho, rho, rho, 1-3rho) over
//             ([, ], +, -) for the tagger, y = rho for spans.

#include <array>
#include <string>
#include <vector>

#include "mdet/autodiff.hpp"
#include "mdet/tagger.hpp"

namespace mdet {

enum class LossMode { Plain, Weighted, Soft };

LossMode parse_loss_mode(const std::string& name);
std::string to_string(LossMode mode);

struct LossConfig {
  LossMode mode = LossMode::Plain;
  double w = 1.0;    // negative weight, (0, 1]
  double rho = 0.0;  // positive prior of negatives
  double tau = 0.5;  // span decode threshold
  int beam = 4;      // tagger beam width

  // Throws ConfigError-like std::invalid_argument on illegal values; the
  // tagger needs 1 - 3 rho > 0.
  void check(bool for_tagger) const;
};

std::array<double, kNumTagSymbols> tagger_soft_target(double rho);

// Per-step target weights (T x 4): loss = -(1/T) sum_t sum_c coef[t][c] log p_t(c).
Tensor tagger_loss_coefficients(const std::vector<TagSymbol>& gold, const LossConfig& cfg);
Var tagger_loss(Graph& g, const std::vector<TaggerStep>& steps, const std::vector<TagSymbol>& gold,
                const LossConfig& cfg);

// Coefficients on log p (pos) and log(1 - p) (neg) for every span.
struct SpanLossCoefficients {
  Tensor on_log_p;
  Tensor on_log_not_p;
};

SpanLossCoefficients span_loss_coefficients(const std::vector<double>& labels, const LossConfig& cfg);

// Mean over spans of -(a log p + b log(1 - p)); `probs` must lie in (0, 1).
Var span_loss(Graph& g, Var probs, const std::vector<double>& labels, const LossConfig& cfg);
// Same loss from pre-sigmoid scores, finite for any score.
Var span_loss_from_logits(Graph& g, Var logits, const std::vector<double>& labels, const LossConfig& cfg);
// One unnormalized term, for inspection.
double span_loss_term(double p, double label, const LossConfig& cfg);

// Smallest value each loss can take for these labels (the entropy of the
// targets, normalized like the loss). Zero in plain and weighted modes.
double tagger_loss_floor(const std::vector<TagSymbol>& gold, const LossConfig& cfg);
double span_loss_floor(const std::vector<double>& labels, const LossConfig& cfg);

// Task log-variances of the uncertainty-weighted combination.
struct MultitaskParams {
  Parameter* s_md = nullptr;
  Parameter* s_cr = nullptr;

  static MultitaskParams create(ParamStore& store, const std::string& name);
};

// exp(-s_md) L_md + s_md / 2 + exp(-s_cr) L_cr + s_cr / 2
Var multitask_combine(Graph& g, Var l_md, Var l_cr, const MultitaskParams& params);
double multitask_combine_value(double l_md, double l_cr, double s_md, double s_cr);

}  // namespace mdet
