#include "mdet/span_scorer.hpp"

#include <cmath>
#include <stdexcept>

namespace mdet {

SpanScope parse_scope(const std::string& name) {
  if (name == "sentence") return SpanScope::Sentence;
  if (name == "document") return SpanScope::Document;
  throw ConfigError("unknown span scope '" + name + "' (expected sentence or document)");
}

std::string to_string(SpanScope scope) { return scope == SpanScope::Sentence ? "sentence" : "document"; }

std::vector<UnitSpan> enumerate_spans(const std::vector<int>& unit_lengths, std::optional<int> max_len) {
  std::vector<UnitSpan> out;
  for (std::size_t u = 0; u < unit_lengths.size(); ++u) {
    const int m = unit_lengths[u];
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) {
        if (max_len && j - i + 1 > *max_len) break;
        out.push_back({static_cast<int>(u), i, j});
      }
  }
  return out;
}

int span_size_bucket(int length) {
  if (length < 1) throw std::out_of_range("span length must be positive");
  if (length <= 4) return length - 1;
  if (length <= 7) return 4;
  if (length <= 15) return 5;
  return 6;
}

SpanScorer::SpanScorer(ParamStore& store, const std::string& name, int encoder_dim, int emb_dim,
                       const SpanScorerConfig& config, Rng& rng)
    : config_(config) {
  if (config.attention && config.max_len <= 0) {
    throw ConfigError("attention pooling needs a maximum span length (max_len > 0)");
  }
  int in = 2 * encoder_dim + emb_dim;
  if (config.size_embedding) {
    size_emb_ = &store.add_uniform(name + ".size_emb", {kNumSizeBuckets, config.d_size}, rng);
    in += config.d_size;
  }
  if (config.attention) attention_ = nn::Linear(store, name + ".attention", encoder_dim, 1, rng);
  span_layer_ = nn::Linear(store, name + ".span", in, config.d_span, rng);
  hidden_layer_ = nn::Linear(store, name + ".hidden", config.d_span, config.d_hidden, rng);
  score_ = nn::Linear(store, name + ".V", config.d_hidden, 1, rng, /*bias=*/false);
  // No output bias: a span whose hidden units are all dead scores exactly 0.5
  // and cannot move. Start them above the hinge.
  for (double& b : hidden_layer_.bias()->value.data) b += config.hidden_bias;
}

Var SpanScorer::span_repr(Graph& g, const nn::EncodedUnit& unit, const std::vector<MentionSpan>& spans) const {
  const int m = static_cast<int>(unit.state_rows.size());
  if (spans.empty()) throw std::invalid_argument("span_repr: no spans");
  std::vector<int> starts, ends;
  starts.reserve(spans.size());
  ends.reserve(spans.size());
  for (const auto& s : spans) {
    if (s.start < 0 || s.start > s.end || s.end >= m) {
      throw std::out_of_range("span_repr: span " + to_string(s) + " outside unit of " + std::to_string(m) + " words");
    }
    if (config_.attention && s.end - s.start + 1 > config_.max_len) {
      throw std::out_of_range("span_repr: span " + to_string(s) + " longer than max_len " +
                              std::to_string(config_.max_len));
    }
    starts.push_back(s.start);
    ends.push_back(s.end);
  }
  Var pooled = config_.attention
                   ? span_attention(unit.embeddings, attention_(g, unit.states), starts, ends)
                   : span_mean(unit.embeddings, starts, ends);
  std::vector<Var> parts{gather(unit.states, starts), gather(unit.states, ends), pooled};
  if (size_emb_) {
    std::vector<int> buckets;
    buckets.reserve(spans.size());
    for (const auto& s : spans) buckets.push_back(span_size_bucket(s.end - s.start + 1));
    parts.push_back(gather(g.param(*size_emb_), buckets));
  }
  return relu(span_layer_(g, concat_cols(parts)));
}

Var SpanScorer::span_logits(Graph& g, Var repr) const {
  Var scores = score_(g, relu(hidden_layer_(g, repr)));
  return reshape(scores, {static_cast<int>(scores.size())});
}

std::vector<std::size_t> decode_mentions(const std::vector<double>& probs, double tau) {
  if (std::isnan(tau)) throw std::invalid_argument("decode_mentions: tau is NaN");
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < probs.size(); ++k)
    if (probs[k] > tau) out.push_back(k);
  return out;
}

}  // namespace mdet
