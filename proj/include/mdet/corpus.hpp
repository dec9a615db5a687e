#pragma once

// Corpus data model, the line-delimited JSON corpus format, a synthetic
// corpus generator, and the partial-annotation simulator.
//
// File format: a header line {"format":"mdet-corpus","version":1}, then one
// JSON object per document:
//   {"doc_id": "...", "sentences": [["tok", ...], ...],
//    "mentions": [[sentence, start, end], ...], "clusters": [[mention index, ...], ...]}
// Spans are 0-based and inclusive, relative to their sentence.

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdet {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SentenceMention {
  int sentence = 0;
  int start = 0;
  int end = 0;
  auto operator<=>(const SentenceMention&) const = default;
};

struct Document {
  std::string doc_id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<SentenceMention> mentions;
  std::vector<std::vector<int>> clusters;

  bool operator==(const Document&) const = default;

  // Throws CorpusError naming doc_id when an invariant fails.
  void check() const;
  int num_tokens() const;
  // Document-level index of each sentence's first token.
  std::vector<int> sentence_offsets() const;
  // Cluster index of every mention, -1 for mentions outside all clusters.
  std::vector<int> cluster_of_mentions() const;
};

using Corpus = std::vector<Document>;

inline constexpr int kCorpusVersion = 1;

void write_corpus(std::ostream& os, const Corpus& corpus);
Corpus read_corpus(std::istream& is);
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// Synthetic documents whose mentions carry surface cues: every mention starts
// with a determiner token, optionally has a modifier, ends in its entity's
// head token, and may embed another mention after "of". Each head token has a
// fixed propensity to belong to a multi-mention entity, so annotated and
// unannotated mentions share surface forms at varying rates.
struct GeneratorConfig {
  int num_docs = 50;
  int min_entities = 4;
  int max_entities = 8;
  int min_chain = 2;  // mentions per multi-mention entity
  int max_chain = 4;
  double min_propensity = 0.1;
  double max_propensity = 0.9;
  int min_mentions_per_sentence = 1;
  int max_mentions_per_sentence = 2;
  int min_filler = 1;  // filler words before each mention and at sentence end
  int max_filler = 3;
  double nesting_prob = 0.2;  // q
  int max_depth = 2;
  double modifier_prob = 0.5;
  int num_determiners = 4;
  int num_modifiers = 12;
  int num_heads = 40;
  int num_fillers = 40;
  int depth_cap = 8;

  // Throws std::invalid_argument on inconsistent settings.
  void check() const;
  static GeneratorConfig from_kv(const std::map<std::string, std::string>& kv);
};

inline const char* kOfToken = "of";
bool is_determiner(const std::string& token);

Corpus synth_generate(const GeneratorConfig& config, std::uint64_t seed);

struct PartialPolicy {
  bool drop_singletons = true;
  double drop_rate = 0.0;  // p
  bool collapse_broken_chains = true;
  std::uint64_t seed = 0;
};

struct PartialCorpus {
  Corpus partial;  // training annotation
  Corpus full;     // untouched gold for evaluation
};

PartialCorpus partialize(const Corpus& corpus, const PartialPolicy& policy);

}  // namespace mdet
