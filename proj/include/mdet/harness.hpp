#pragma once

// Run configuration, models, training loops, evaluation, sweeps and the
// gradient-check suite behind the command line tool.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdet/coref.hpp"
#include "mdet/corpus.hpp"
#include "mdet/metrics.hpp"
#include "mdet/nn.hpp"
#include "mdet/objectives.hpp"
#include "mdet/optim.hpp"
#include "mdet/span_scorer.hpp"
#include "mdet/tagger.hpp"

namespace mdet {

enum class ModelKind { Tagger, Span };
ModelKind parse_model(const std::string& name);
std::string to_string(ModelKind kind);

struct RunConfig {
  ModelKind model = ModelKind::Span;
  LossConfig loss;
  bool multitask = false;
  int d_emb = 32;
  int d_hidden = 64;  // BiLSTM state size per direction
  int d_symbol = 16;
  int d_span = 64;
  int d_ffnn = 64;  // span scorer and pair scorer hidden width
  bool size_embedding = false;
  bool attention = false;
  int max_span_len = 0;
  SpanScope scope = SpanScope::Sentence;
  int depth_cap = kDefaultDepthCap;
  int antecedent_cap = 50;
  OptimizerConfig optim;
  int epochs = 30;
  std::optional<std::uint64_t> seed;
  // Keep the epoch with the best selection-set mention F1; otherwise the last.
  bool select_best = true;
  std::string train_path;
  std::string dev_path;  // empty: select on the training set
  std::string output_dir;

  // Throws std::invalid_argument on illegal or missing settings. With
  // `need_paths`, the corpus paths must exist.
  void check(bool need_paths) const;
  std::map<std::string, std::string> to_kv() const;
  static RunConfig from_kv(const std::map<std::string, std::string>& kv);
};

class Vocab {
 public:
  static constexpr int kUnknown = 0;
  static constexpr const char* kUnknownToken = "<unk>";

  Vocab();
  static Vocab build(const Corpus& corpus);
  explicit Vocab(std::vector<std::string> tokens);

  int id(const std::string& token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

class VocabularyMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Model {
 public:
  // Parameters are initialized from the config seed.
  Model(const RunConfig& config, Vocab vocab);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const RunConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  const nn::Encoder& encoder() const { return encoder_; }
  // Span model detector; for the multitask tagger only its representation
  // layer is used.
  const SpanScorer& span_scorer() const { return span_; }
  const Tagger& tagger() const { return tagger_; }
  const CorefHead& coref() const { return coref_; }
  const MultitaskParams& multitask() const { return mt_; }
  bool has_coref() const { return config_.multitask; }

 private:
  RunConfig config_;
  Vocab vocab_;
  ParamStore store_;
  nn::Encoder encoder_;
  SpanScorer span_;
  Tagger tagger_;
  CorefHead coref_;
  MultitaskParams mt_;
};

// Text checkpoint: resolved config, vocabulary, parameters (bit-exact).
void save_checkpoint(const Model& model, const std::string& path);
std::unique_ptr<Model> load_checkpoint(const std::string& path);
void write_checkpoint(std::ostream& os, const Model& model);
std::unique_ptr<Model> read_checkpoint(std::istream& is);

// Encoding units of a document under the model's scope.
struct DocUnits {
  std::vector<std::vector<int>> ids;
  std::vector<int> offset;    // document index of each unit's first token
  std::vector<int> sentence;  // sentence of each unit, -1 for the whole document
};
DocUnits make_units(const Document& doc, const Vocab& vocab, SpanScope scope);

// Gold annotation of a document in document token indices.
struct DocGold {
  std::vector<MentionSpan> spans;
  std::vector<int> cluster;  // per span, -1 outside chains
};
DocGold doc_gold(const Document& doc);

enum class RunPhase { Train, Test };

struct DocumentPass {
  Var detector_loss;  // valid in Train
  double detector_floor = 0.0;  // Train: lowest value detector_loss can reach
  Var coref_loss;     // valid in Train with a coreference head
  std::vector<MentionSpan> predicted;  // document indices, sorted
  // Span model: every enumerated span and its probability.
  std::vector<MentionSpan> spans;
  std::vector<double> probs;
  // Coreference.
  std::vector<CandidateMention> candidates;
  PairScores pairs;
  std::vector<std::vector<int>> clusters;  // candidate indices, size >= 2
  // Tagger multitask instrumentation.
  std::string pass1_conditioning;
  std::string pass2_conditioning;
};

struct PassOptions {
  RunPhase phase = RunPhase::Test;
  bool run_coref = false;
  double tau = 0.5;
  int beam = 4;
};

DocumentPass run_document(Graph& g, const Model& model, const Document& doc, const PassOptions& opts);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  MetricCounts mention;
  bool has_coref = false;
  MetricCounts muc, b3, ceaf;

  PRF mention_prf() const { return mention.prf(); }
  PRF muc_prf() const { return muc.prf(); }
  PRF b3_prf() const { return b3.prf(); }
  PRF ceaf_prf() const { return ceaf.prf(); }
  double conll() const { return conll_average(muc.prf(), b3.prf(), ceaf.prf()); }
};

struct EvalOptions {
  double tau = 0.5;
  int beam = 4;
  bool coref = true;  // ignored without a coreference head
};

// Throws VocabularyMismatch when most corpus tokens are unknown to the model.
EvalReport evaluate(const Model& model, const Corpus& corpus, const EvalOptions& opts);

// Span model only: mention P/R/F1 at each threshold from one forward pass.
std::vector<std::pair<double, PRF>> mention_curve(const Model& model, const Corpus& corpus,
                                                  const std::vector<double>& taus);

void write_report(std::ostream& os, const EvalReport& report);     // table
void write_report_kv(std::ostream& os, const EvalReport& report);  // key=value

// Copy of `corpus` with predicted mentions and clusters in place of gold.
Corpus decode_corpus(const Model& model, const Corpus& corpus, const EvalOptions& opts);

// One line per sentence: doc_id, sentence, tag string, spans. The tag string
// is the canonical encoding of the sentence's predicted spans, or "*" when
// they cross.
void write_decoded_lines(std::ostream& os, const Corpus& decoded, int depth_cap = kDefaultDepthCap);

// Span model only: TSV of doc_id, sent_id, i, j, probability, label for every
// enumerated span; label is 1 when the span is a mention in `corpus`.
void write_span_scores(std::ostream& os, const Model& model, const Corpus& corpus);

// Mention tuples of a document's spans; cross-sentence spans get sentence -1
// and document indices.
std::vector<MentionTuple> mention_tuples(const Document& doc, int doc_index, const std::vector<MentionSpan>& spans);

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
  int epoch = 0;
  int step = 0;
  std::string doc_id;
  double l_md = 0.0;
  double l_md_floor = 0.0;  // multitask combines l_md - l_md_floor
  double l_cr = 0.0;
  double s_md = 0.0;  // before the update
  double s_cr = 0.0;
  double combined = 0.0;
  std::string pass1;
  std::string pass2;
};

struct EpochRecord {
  int epoch = 0;
  double detector_loss = 0.0;
  double coref_loss = 0.0;
  double combined_loss = 0.0;
  PRF dev_mention;
  double dev_conll = 0.0;
  bool evaluated = false;
  bool selected = false;
};

struct TrainResult {
  std::unique_ptr<Model> model;  // selected epoch's parameters
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  int best_epoch = 0;
  EvalReport final_dev;
};

struct TrainOptions {
  bool record_steps = true;
  // Called after every epoch; for progress output.
  std::function<void(const EpochRecord&)> on_epoch;
};

TrainResult train(const RunConfig& config, const Corpus& train_corpus, const Corpus* dev_corpus,
                  const TrainOptions& opts = {});

void write_epoch_log(std::ostream& os, const TrainResult& result, bool has_coref);
void write_step_log(std::ostream& os, const std::vector<StepRecord>& steps);

// Loads corpora named by the config, trains, and writes model.ckpt,
// train_log.tsv, step_log.tsv and run_config.txt into output_dir.
TrainResult train_to_directory(const RunConfig& config, const TrainOptions& opts = {});

// ---------------------------------------------------------------------------
// Sweep

struct SweepPoint {
  LossMode mode = LossMode::Plain;
  double w = 1.0;
  double rho = 0.0;
};

struct SweepGrid {
  std::vector<SweepPoint> points;
  std::vector<double> taus;

  // Keys sweep.modes, sweep.w, sweep.rho, sweep.tau (comma separated).
  static SweepGrid from_kv(const std::map<std::string, std::string>& kv);
  static SweepGrid default_grid();
};

struct SweepRow {
  SweepPoint point;
  std::optional<double> tau;  // none for the tagger's one-best output
  PRF mention;
  std::optional<double> avg_f1;
};

std::vector<SweepRow> sweep(const RunConfig& base, const SweepGrid& grid, const Corpus& train_corpus,
                            const Corpus* dev_corpus, const Corpus& eval_corpus);
void write_sweep_tsv(std::ostream& os, const std::vector<SweepRow>& rows);

// ---------------------------------------------------------------------------
// Gradient checks on tiny instances

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

std::vector<GradCheckCase> gradient_suite(std::uint64_t seed);

}  // namespace mdet
