#include "mdet/tagger.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdet {

namespace {
constexpr int kStartRow = kNumTagSymbols;
}

Tagger::Tagger(ParamStore& store, const std::string& name, int encoder_dim, const TaggerConfig& config, Rng& rng)
    : config_(config), encoder_dim_(encoder_dim) {
  symbol_emb_ = &store.add_uniform(name + ".symbol_emb", {kNumTagSymbols + 1, config.d_symbol}, rng);
  decoder_ = nn::LstmCell(store, name + ".decoder", config.d_symbol, encoder_dim, rng);
  out_ = nn::Linear(store, name + ".out", 2 * encoder_dim, kNumTagSymbols, rng);
  // Start every output unit above the ReLU hinge; at zero bias all four can
  // die together and leave a uniform distribution with no gradient.
  for (double& b : out_.bias()->value.data) b += config.output_bias;
}

nn::LstmState Tagger::initial_state(Graph& g, const nn::EncodedUnit& unit) const {
  return {unit.last_state, g.constant(Tensor({encoder_dim_}))};
}

Tagger::StepResult Tagger::step(Graph& g, std::optional<TagSymbol> prev, const nn::LstmState& state,
                                Var word_state) const {
  const int row_index = prev ? static_cast<int>(*prev) : kStartRow;
  Var input = row(g.param(*symbol_emb_), row_index);
  nn::LstmState next = decoder_.step(g, input, state);
  Var logits = relu(out_(g, concat({next.h, word_state})));
  return {next, logits};
}

std::vector<TaggerStep> Tagger::forward_teacher_forced(Graph& g, const nn::EncodedUnit& unit,
                                                       const std::vector<TagSymbol>& gold) const {
  const int m = static_cast<int>(unit.state_rows.size());
  if (m == 0) throw std::invalid_argument("forward_teacher_forced: empty sentence");
  ValidationReport report = validate(gold, m, config_.depth_cap);
  if (!report.ok) throw TagError(report);

  std::vector<TaggerStep> steps;
  steps.reserve(gold.size());
  nn::LstmState state = initial_state(g, unit);
  std::optional<TagSymbol> prev;
  int word = 0;
  for (TagSymbol s : gold) {
    StepResult r = step(g, prev, state, unit.state_rows[word]);
    state = r.state;
    steps.push_back({word, s, r.logits, log_softmax(r.logits)});
    prev = s;
    if (is_advance(s)) ++word;
  }
  return steps;
}

namespace {

struct Hypothesis {
  std::vector<TagSymbol> symbols;
  std::vector<StepDistribution> steps;
  double score = 0.0;
  GrammarState grammar;
  Tensor h, c;
};

}  // namespace

DecodeResult Tagger::beam_decode(const nn::EncodedUnit& unit, int beam) const {
  if (beam < 1) throw std::invalid_argument("beam_decode: beam must be >= 1");
  const int m = static_cast<int>(unit.state_rows.size());
  if (m == 0) throw std::invalid_argument("beam_decode: empty sentence");
  std::vector<Tensor> words;
  words.reserve(m);
  for (const Var& v : unit.state_rows) words.push_back(v.value());
  const auto by_score = [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; };

  // Word-synchronous search: hypotheses only compete with others that have
  // consumed the same words. Inside a word, bracket prefixes form their own
  // beam and die once they fall below the B-th best advanced hypothesis.
  std::vector<Hypothesis> boundary(1);
  boundary[0].h = unit.last_state.value();
  boundary[0].c = Tensor({encoder_dim_});
  for (int w = 0; w < m; ++w) {
    std::vector<Hypothesis> inside = std::move(boundary);
    boundary.clear();
    while (!inside.empty()) {
      std::vector<Hypothesis> open;
      for (const Hypothesis& hyp : inside) {
        Graph g;
        std::optional<TagSymbol> prev;
        if (!hyp.symbols.empty()) prev = hyp.symbols.back();
        nn::LstmState st{g.constant(hyp.h), g.constant(hyp.c)};
        StepResult r = step(g, prev, st, g.constant(words[w]));
        const Tensor& lp = log_softmax(r.logits).value();
        StepDistribution dist{w, {}};
        for (int k = 0; k < kNumTagSymbols; ++k) dist.probs[k] = std::exp(lp[k]);

        for (int k = 0; k < kNumTagSymbols; ++k) {
          const TagSymbol s = static_cast<TagSymbol>(k);
          if (check_symbol(hyp.grammar, s, m, config_.depth_cap)) continue;
          GrammarState next = hyp.grammar;
          apply_symbol(next, s);
          if (!completable(next, m)) continue;
          Hypothesis cand;
          cand.symbols = hyp.symbols;
          cand.symbols.push_back(s);
          cand.steps = hyp.steps;
          cand.steps.push_back(dist);
          cand.score = hyp.score + lp[k];
          cand.grammar = std::move(next);
          cand.h = r.state.h.value();
          cand.c = r.state.c.value();
          (is_advance(s) ? boundary : open).push_back(std::move(cand));
        }
      }
      std::stable_sort(boundary.begin(), boundary.end(), by_score);
      if (boundary.size() > static_cast<std::size_t>(beam)) boundary.resize(beam);
      std::stable_sort(open.begin(), open.end(), by_score);
      if (open.size() > static_cast<std::size_t>(beam)) open.resize(beam);
      // Scores only decrease, so a prefix at or below a full boundary beam's
      // last entry can never enter it.
      if (boundary.size() == static_cast<std::size_t>(beam)) {
        const double floor = boundary.back().score;
        std::erase_if(open, [&](const Hypothesis& h) { return h.score <= floor; });
      }
      inside = std::move(open);
    }
  }
  if (boundary.empty()) throw std::logic_error("beam_decode: no complete sequence (grammar masks are inconsistent)");
  Hypothesis& best = boundary.front();
  if (!finished(best.grammar, m)) throw std::logic_error("beam_decode: best hypothesis is incomplete");
  DecodeResult out;
  out.symbols = std::move(best.symbols);
  out.score = best.score;
  out.steps = std::move(best.steps);
  return out;
}

std::vector<StepDistribution> step_distributions(const std::vector<TaggerStep>& steps) {
  std::vector<StepDistribution> out;
  out.reserve(steps.size());
  for (const auto& s : steps) {
    StepDistribution d{s.word, {}};
    const Tensor& lp = s.log_probs.value();
    for (int k = 0; k < kNumTagSymbols; ++k) d.probs[k] = std::exp(lp[k]);
    out.push_back(d);
  }
  return out;
}

namespace {

// Index of the step aligned to `word` with the highest probability of `sym`;
// earliest step wins ties.
template <typename ProbAt>
int best_step(std::size_t n, int word, TagSymbol sym, ProbAt prob_at, const std::vector<int>& words) {
  int best = -1;
  double best_p = -1.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (words[t] != word) continue;
    const double p = prob_at(t, sym);
    if (p > best_p) {
      best_p = p;
      best = static_cast<int>(t);
    }
  }
  if (best < 0) throw std::out_of_range("mention_confidence: no decoder step at word " + std::to_string(word));
  return best;
}

}  // namespace

std::pair<double, double> mention_confidence(const std::vector<StepDistribution>& steps, int i, int j) {
  std::vector<int> words;
  for (const auto& s : steps) words.push_back(s.word);
  auto prob = [&](std::size_t t, TagSymbol s) { return steps[t].probs[static_cast<int>(s)]; };
  const int ti = best_step(steps.size(), i, TagSymbol::Open, prob, words);
  const int tj = best_step(steps.size(), j, TagSymbol::Close, prob, words);
  return {steps[ti].probs[static_cast<int>(TagSymbol::Open)], steps[tj].probs[static_cast<int>(TagSymbol::Close)]};
}

std::pair<Var, Var> mention_confidence_vars(const std::vector<TaggerStep>& steps, int i, int j) {
  std::vector<int> words;
  for (const auto& s : steps) words.push_back(s.word);
  auto prob = [&](std::size_t t, TagSymbol s) { return std::exp(steps[t].log_probs.value()[static_cast<int>(s)]); };
  const int ti = best_step(steps.size(), i, TagSymbol::Open, prob, words);
  const int tj = best_step(steps.size(), j, TagSymbol::Close, prob, words);
  return {exp(pick(steps[ti].log_probs, static_cast<int>(TagSymbol::Open))),
          exp(pick(steps[tj].log_probs, static_cast<int>(TagSymbol::Close)))};
}

}  // namespace mdet
