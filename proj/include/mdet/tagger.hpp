#pragma once

// Sequence-to-sequence mention tagger. A BiLSTM encodes the words; an LSTM
// decoder emits bracket tags while a pointer walks over the words. At each
// step the decoder state and the pointed word's encoding feed a ReLU output
// layer followed by a softmax over the four tag symbols.

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mdet/nn.hpp"
#include "mdet/tag_codec.hpp"

namespace mdet {

struct TaggerConfig {
  int d_symbol = 16;
  int depth_cap = kDefaultDepthCap;
  double output_bias = 1.0;  // added to the initial output-layer bias
};

// One decoder step inside a graph.
struct TaggerStep {
  int word = 0;
  TagSymbol symbol{};  // the symbol conditioned on at the next step
  Var logits;          // o_t, size 4
  Var log_probs;       // log softmax(o_t)
};

// One decoder step as plain numbers.
struct StepDistribution {
  int word = 0;
  std::array<double, kNumTagSymbols> probs{};
};

struct DecodeResult {
  std::vector<TagSymbol> symbols;
  double score = 0.0;  // sum of log-probabilities of the chosen symbols
  std::vector<StepDistribution> steps;
};

class Tagger {
 public:
  Tagger() = default;
  Tagger(ParamStore& store, const std::string& name, int encoder_dim, const TaggerConfig& config, Rng& rng);

  struct StepResult {
    nn::LstmState state;
    Var logits;
  };

  // Consumes the previous symbol (nullopt for the first step) and scores the
  // next one for the word whose encoding is `word_state`.
  StepResult step(Graph& g, std::optional<TagSymbol> prev, const nn::LstmState& state, Var word_state) const;

  // d_0 = h_M; the cell state starts at zero.
  nn::LstmState initial_state(Graph& g, const nn::EncodedUnit& unit) const;

  // Teacher-forced pass; `gold` must pass validate().
  std::vector<TaggerStep> forward_teacher_forced(Graph& g, const nn::EncodedUnit& unit,
                                                 const std::vector<TagSymbol>& gold) const;

  // Grammar-constrained beam search over the encoder states in `unit` (only
  // the values are read). The result always passes validate().
  DecodeResult beam_decode(const nn::EncodedUnit& unit, int beam) const;

  const TaggerConfig& config() const { return config_; }
  int encoder_dim() const { return encoder_dim_; }

 private:
  TaggerConfig config_;
  int encoder_dim_ = 0;
  Parameter* symbol_emb_ = nullptr;  // (5 x d_symbol); row 4 is start-of-sequence
  nn::LstmCell decoder_;
  nn::Linear out_;
};

// Plain numbers for the steps of a graph pass.
std::vector<StepDistribution> step_distributions(const std::vector<TaggerStep>& steps);

// (max P("[") over steps at word i, max P("]") over steps at word j).
std::pair<double, double> mention_confidence(const std::vector<StepDistribution>& steps, int i, int j);

// Same rule inside a graph: the probabilities of the maximizing steps.
std::pair<Var, Var> mention_confidence_vars(const std::vector<TaggerStep>& steps, int i, int j);

}  // namespace mdet
