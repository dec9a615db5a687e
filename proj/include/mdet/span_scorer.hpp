#pragma once

// Exhaustive span scorer: every span (i, j) of a unit is represented as
//   m_ij = relu(W_h [h_i, h_j, mean(x_i..x_j)] + b_h)
// and detected with probability sigmoid(V relu(W_m m_ij + b_m)).
// Optional variants append a span-size embedding or replace the mean
// embedding with attention pooling over x_i..x_j.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdet/nn.hpp"
#include "mdet/tag_codec.hpp"

namespace mdet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class SpanScope { Sentence, Document };

SpanScope parse_scope(const std::string& name);
std::string to_string(SpanScope scope);

struct SpanScorerConfig {
  int d_span = 64;    // width of m_ij
  int d_hidden = 64;  // width of relu(W_m m_ij + b_m)
  bool size_embedding = false;
  int d_size = 8;
  bool attention = false;
  int max_len = 0;  // 0: unlimited
  double hidden_bias = 0.5;  // added to the initial W_m bias
};

// Span of one scope unit (a sentence, or the whole document).
struct UnitSpan {
  int unit = 0;
  int start = 0;
  int end = 0;
  auto operator<=>(const UnitSpan&) const = default;
};

// All (i, j) with i <= j inside each unit, unit by unit, i-major. With
// max_len set, only spans of at most max_len words.
std::vector<UnitSpan> enumerate_spans(const std::vector<int>& unit_lengths, std::optional<int> max_len = {});

// Length buckets {1,2,3,4,5-7,8-15,16+} -> 0..6.
inline constexpr int kNumSizeBuckets = 7;
int span_size_bucket(int length);

class SpanScorer {
 public:
  SpanScorer() = default;
  // Throws ConfigError for the attention variant without max_len.
  SpanScorer(ParamStore& store, const std::string& name, int encoder_dim, int emb_dim, const SpanScorerConfig& config,
             Rng& rng);

  // (spans.size() x d_span). Throws std::out_of_range on bad indices.
  Var span_repr(Graph& g, const nn::EncodedUnit& unit, const std::vector<MentionSpan>& spans) const;
  // Pre-sigmoid scores, one per row of `repr`.
  Var span_logits(Graph& g, Var repr) const;
  Var span_probs(Graph& g, Var repr) const { return sigmoid(span_logits(g, repr)); }

  const SpanScorerConfig& config() const { return config_; }
  int repr_dim() const { return config_.d_span; }

 private:
  SpanScorerConfig config_;
  nn::Linear span_layer_;   // W_h, b_h
  nn::Linear hidden_layer_; // W_m, b_m
  nn::Linear score_;        // V
  Parameter* size_emb_ = nullptr;
  nn::Linear attention_;
};

// Indices of the spans whose probability is strictly above tau.
std::vector<std::size_t> decode_mentions(const std::vector<double>& probs, double tau);

}  // namespace mdet
