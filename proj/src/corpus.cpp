#include "mdet/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <set>

#include "mdet/kv.hpp"
#include "mdet/rng.hpp"

namespace mdet {

using nlohmann::json;

void Document::check() const {
  auto fail = [&](const std::string& what) { throw CorpusError("document '" + doc_id + "': " + what); };
  if (doc_id.empty()) throw CorpusError("document with empty doc_id");
  for (std::size_t s = 0; s < sentences.size(); ++s)
    if (sentences[s].empty()) fail("sentence " + std::to_string(s) + " is empty");
  std::set<SentenceMention> seen;
  for (std::size_t m = 0; m < mentions.size(); ++m) {
    const auto& x = mentions[m];
    if (x.sentence < 0 || x.sentence >= static_cast<int>(sentences.size()))
      fail("mention " + std::to_string(m) + " refers to missing sentence " + std::to_string(x.sentence));
    const int len = static_cast<int>(sentences[x.sentence].size());
    if (x.start < 0 || x.end < x.start || x.end >= len) {
      fail("mention " + std::to_string(m) + " span [" + std::to_string(x.start) + ", " + std::to_string(x.end) +
           "] out of range for sentence " + std::to_string(x.sentence) + " of length " + std::to_string(len));
    }
    if (!seen.insert(x).second) fail("mention " + std::to_string(m) + " duplicates an earlier mention");
  }
  std::vector<int> owner(mentions.size(), -1);
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (clusters[c].empty()) fail("cluster " + std::to_string(c) + " is empty");
    for (int m : clusters[c]) {
      if (m < 0 || m >= static_cast<int>(mentions.size()))
        fail("cluster " + std::to_string(c) + " refers to missing mention " + std::to_string(m));
      if (owner[m] >= 0) fail("mention " + std::to_string(m) + " belongs to clusters " + std::to_string(owner[m]) +
                              " and " + std::to_string(c));
      owner[m] = static_cast<int>(c);
    }
  }
}

int Document::num_tokens() const {
  int n = 0;
  for (const auto& s : sentences) n += static_cast<int>(s.size());
  return n;
}

std::vector<int> Document::sentence_offsets() const {
  std::vector<int> off;
  int n = 0;
  for (const auto& s : sentences) {
    off.push_back(n);
    n += static_cast<int>(s.size());
  }
  return off;
}

std::vector<int> Document::cluster_of_mentions() const {
  std::vector<int> owner(mentions.size(), -1);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (int m : clusters[c])
      if (m >= 0 && m < static_cast<int>(owner.size())) owner[m] = static_cast<int>(c);
  return owner;
}

void write_corpus(std::ostream& os, const Corpus& corpus) {
  nlohmann::ordered_json header;
  header["format"] = "mdet-corpus";
  header["version"] = kCorpusVersion;
  os << header.dump() << '\n';
  for (const auto& d : corpus) {
    json mentions = json::array();
    for (const auto& m : d.mentions) mentions.push_back({m.sentence, m.start, m.end});
    nlohmann::ordered_json j;
    j["doc_id"] = d.doc_id;
    j["sentences"] = d.sentences;
    j["mentions"] = std::move(mentions);
    j["clusters"] = d.clusters;
    os << j.dump() << '\n';
  }
}

namespace {

[[noreturn]] void field_error(int line, const std::string& field, const std::string& what) {
  throw CorpusError("line " + std::to_string(line) + ": field '" + field + "': " + what);
}

const json& require(const json& j, const char* field, int line) {
  auto it = j.find(field);
  if (it == j.end()) field_error(line, field, "missing");
  return *it;
}

Document parse_document(const json& j, int line) {
  if (!j.is_object()) throw CorpusError("line " + std::to_string(line) + ": record is not a JSON object");
  Document d;
  const json& id = require(j, "doc_id", line);
  if (!id.is_string()) field_error(line, "doc_id", "expected a string");
  d.doc_id = id.get<std::string>();

  const json& sents = require(j, "sentences", line);
  if (!sents.is_array()) field_error(line, "sentences", "expected an array of token arrays");
  for (const auto& s : sents) {
    if (!s.is_array()) field_error(line, "sentences", "expected an array of token arrays");
    std::vector<std::string> toks;
    for (const auto& t : s) {
      if (!t.is_string()) field_error(line, "sentences", "token is not a string");
      toks.push_back(t.get<std::string>());
    }
    d.sentences.push_back(std::move(toks));
  }

  const json& ments = require(j, "mentions", line);
  if (!ments.is_array()) field_error(line, "mentions", "expected an array of [sentence, start, end]");
  for (const auto& m : ments) {
    if (!m.is_array() || m.size() != 3 || !m[0].is_number_integer() || !m[1].is_number_integer() ||
        !m[2].is_number_integer())
      field_error(line, "mentions", "expected [sentence, start, end] integers, got " + m.dump());
    d.mentions.push_back({m[0].get<int>(), m[1].get<int>(), m[2].get<int>()});
  }

  auto cl = j.find("clusters");
  if (cl != j.end()) {
    if (!cl->is_array()) field_error(line, "clusters", "expected an array of mention index arrays");
    for (const auto& c : *cl) {
      if (!c.is_array()) field_error(line, "clusters", "expected an array of mention index arrays");
      std::vector<int> members;
      for (const auto& m : c) {
        if (!m.is_number_integer()) field_error(line, "clusters", "mention index is not an integer");
        members.push_back(m.get<int>());
      }
      d.clusters.push_back(std::move(members));
    }
  }
  try {
    d.check();
  } catch (const CorpusError& e) {
    throw CorpusError("line " + std::to_string(line) + ": " + e.what());
  }
  return d;
}

}  // namespace

Corpus read_corpus(std::istream& is) {
  Corpus corpus;
  std::string text;
  int line = 0;
  bool header = false;
  std::set<std::string> ids;
  while (std::getline(is, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw CorpusError("line " + std::to_string(line) + ": invalid JSON: " + e.what());
    }
    if (!header) {
      if (!j.is_object() || j.value("format", std::string()) != "mdet-corpus")
        throw CorpusError("line " + std::to_string(line) + ": missing corpus header");
      auto v = j.find("version");
      if (v == j.end() || !v->is_number_integer() || v->get<int>() != kCorpusVersion)
        field_error(line, "version", "unsupported corpus version");
      header = true;
      continue;
    }
    Document d = parse_document(j, line);
    if (!ids.insert(d.doc_id).second) field_error(line, "doc_id", "duplicate doc_id '" + d.doc_id + "'");
    corpus.push_back(std::move(d));
  }
  if (!header) throw CorpusError("empty corpus file: missing header");
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus file " + path);
  write_corpus(out, corpus);
  if (!out) throw CorpusError("write failed for corpus file " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file " + path);
  try {
    return read_corpus(in);
  } catch (const CorpusError& e) {
    throw CorpusError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator

void GeneratorConfig::check() const {
  auto bad = [](const std::string& w) { throw std::invalid_argument("generator config: " + w); };
  if (num_docs < 0) bad("num_docs < 0");
  if (min_entities < 1 || max_entities < min_entities) bad("entity range");
  if (min_chain < 2 || max_chain < min_chain) bad("chain length range must start at 2 or more");
  if (!(min_propensity >= 0.0 && max_propensity <= 1.0 && min_propensity <= max_propensity)) bad("propensity range");
  if (min_mentions_per_sentence < 1 || max_mentions_per_sentence < min_mentions_per_sentence)
    bad("mentions per sentence range");
  if (min_filler < 0 || max_filler < min_filler) bad("filler range");
  if (!(nesting_prob >= 0.0 && nesting_prob <= 1.0)) bad("nesting_prob outside [0, 1]");
  if (!(modifier_prob >= 0.0 && modifier_prob <= 1.0)) bad("modifier_prob outside [0, 1]");
  if (max_depth < 1 || max_depth > depth_cap) bad("max_depth must be in [1, depth_cap]");
  if (num_heads < max_entities) bad("num_heads must be at least max_entities");
  if (num_determiners < 1 || num_modifiers < 1 || num_fillers < 1) bad("vocabulary sizes must be positive");
}

GeneratorConfig GeneratorConfig::from_kv(const std::map<std::string, std::string>& kv) {
  GeneratorConfig c;
  c.num_docs = kv_int(kv, "num_docs", c.num_docs);
  c.min_entities = kv_int(kv, "min_entities", c.min_entities);
  c.max_entities = kv_int(kv, "max_entities", c.max_entities);
  c.min_chain = kv_int(kv, "min_chain", c.min_chain);
  c.max_chain = kv_int(kv, "max_chain", c.max_chain);
  c.min_propensity = kv_double(kv, "min_propensity", c.min_propensity);
  c.max_propensity = kv_double(kv, "max_propensity", c.max_propensity);
  c.min_mentions_per_sentence = kv_int(kv, "min_mentions_per_sentence", c.min_mentions_per_sentence);
  c.max_mentions_per_sentence = kv_int(kv, "max_mentions_per_sentence", c.max_mentions_per_sentence);
  c.min_filler = kv_int(kv, "min_filler", c.min_filler);
  c.max_filler = kv_int(kv, "max_filler", c.max_filler);
  c.nesting_prob = kv_double(kv, "nesting_prob", c.nesting_prob);
  c.max_depth = kv_int(kv, "max_depth", c.max_depth);
  c.modifier_prob = kv_double(kv, "modifier_prob", c.modifier_prob);
  c.num_determiners = kv_int(kv, "num_determiners", c.num_determiners);
  c.num_modifiers = kv_int(kv, "num_modifiers", c.num_modifiers);
  c.num_heads = kv_int(kv, "num_heads", c.num_heads);
  c.num_fillers = kv_int(kv, "num_fillers", c.num_fillers);
  c.depth_cap = kv_int(kv, "depth_cap", c.depth_cap);
  c.check();
  return c;
}

bool is_determiner(const std::string& token) { return token.rfind("det", 0) == 0; }

namespace {

struct DocBuilder {
  const GeneratorConfig& cfg;
  Rng& rng;
  const std::vector<int>& head_of;  // entity -> head token id
  std::vector<int> queue;           // remaining entity mentions, front at back()
  std::vector<std::string> tokens;
  std::vector<std::pair<SentenceMention, int>> mentions;  // with entity id
  int sentence = 0;

  void phrase(int depth) {
    const int e = queue.back();
    queue.pop_back();
    const int start = static_cast<int>(tokens.size());
    tokens.push_back("det" + std::to_string(rng.below(cfg.num_determiners)));
    if (rng.bernoulli(cfg.modifier_prob)) tokens.push_back("mod" + std::to_string(rng.below(cfg.num_modifiers)));
    tokens.push_back("head" + std::to_string(head_of[e]));
    if (depth + 1 < cfg.max_depth && !queue.empty() && queue.back() != e && rng.bernoulli(cfg.nesting_prob)) {
      tokens.push_back(kOfToken);
      phrase(depth + 1);
    }
    mentions.push_back({{sentence, start, static_cast<int>(tokens.size()) - 1}, e});
  }

  void filler(int n) {
    for (int i = 0; i < n; ++i) tokens.push_back("w" + std::to_string(rng.below(cfg.num_fillers)));
  }
};

}  // namespace

Corpus synth_generate(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.check();
  const Rng master(seed);
  Rng prop_rng = master.split(0xfffffffffULL);
  std::vector<double> propensity(cfg.num_heads);
  for (auto& p : propensity) p = prop_rng.uniform(cfg.min_propensity, cfg.max_propensity);

  Corpus corpus;
  for (int d = 0; d < cfg.num_docs; ++d) {
    Rng rng = master.split(static_cast<std::uint64_t>(d));
    const int n_ent = rng.range(cfg.min_entities, cfg.max_entities);
    std::vector<int> heads(cfg.num_heads);
    std::iota(heads.begin(), heads.end(), 0);
    for (int i = 0; i < n_ent; ++i) std::swap(heads[i], heads[i + rng.below(cfg.num_heads - i)]);
    heads.resize(n_ent);

    std::vector<int> queue;
    for (int e = 0; e < n_ent; ++e) {
      const int n = rng.bernoulli(propensity[heads[e]]) ? rng.range(cfg.min_chain, cfg.max_chain) : 1;
      for (int k = 0; k < n; ++k) queue.push_back(e);
    }
    for (std::size_t i = queue.size(); i > 1; --i) std::swap(queue[i - 1], queue[rng.below(i)]);

    Document doc;
    doc.doc_id = "synth-" + std::to_string(d);
    std::vector<std::pair<SentenceMention, int>> all;
    DocBuilder b{cfg, rng, heads, std::move(queue), {}, {}, 0};
    while (!b.queue.empty()) {
      b.tokens.clear();
      b.mentions.clear();
      const int slots = rng.range(cfg.min_mentions_per_sentence, cfg.max_mentions_per_sentence);
      for (int s = 0; s < slots && !b.queue.empty(); ++s) {
        b.filler(rng.range(cfg.min_filler, cfg.max_filler));
        b.phrase(0);
      }
      b.filler(std::max(1, rng.range(cfg.min_filler, cfg.max_filler)));
      doc.sentences.push_back(b.tokens);
      all.insert(all.end(), b.mentions.begin(), b.mentions.end());
      ++b.sentence;
    }
    std::sort(all.begin(), all.end());
    std::map<int, std::vector<int>> by_entity;
    for (std::size_t m = 0; m < all.size(); ++m) {
      doc.mentions.push_back(all[m].first);
      by_entity[all[m].second].push_back(static_cast<int>(m));
    }
    std::vector<std::vector<int>> clusters;
    for (auto& [e, members] : by_entity)
      if (members.size() >= 2) clusters.push_back(std::move(members));
    std::sort(clusters.begin(), clusters.end());
    doc.clusters = std::move(clusters);
    doc.check();
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

// ---------------------------------------------------------------------------

PartialCorpus partialize(const Corpus& corpus, const PartialPolicy& policy) {
  if (!(policy.drop_rate >= 0.0 && policy.drop_rate <= 1.0))
    throw std::invalid_argument("partialize: drop rate outside [0, 1]");
  PartialCorpus out;
  out.full = corpus;
  const Rng master(policy.seed);
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const Document& doc = corpus[d];
    Rng rng = master.split(d);
    const std::vector<int> owner = doc.cluster_of_mentions();
    const std::size_t n = doc.mentions.size();
    std::vector<bool> keep(n, true);
    for (std::size_t m = 0; m < n; ++m) {
      const bool dropped = rng.bernoulli(policy.drop_rate);  // drawn for every mention
      if (policy.drop_singletons && owner[m] < 0) keep[m] = false;
      if (keep[m] && dropped) keep[m] = false;
    }
    std::vector<std::vector<int>> clusters;
    for (const auto& c : doc.clusters) {
      std::vector<int> kept;
      for (int m : c)
        if (keep[m]) kept.push_back(m);
      if (kept.size() >= 2) {
        clusters.push_back(std::move(kept));
      } else if (policy.collapse_broken_chains) {
        for (int m : kept) keep[m] = false;
      }
    }
    std::vector<int> remap(n, -1);
    Document p;
    p.doc_id = doc.doc_id;
    p.sentences = doc.sentences;
    for (std::size_t m = 0; m < n; ++m) {
      if (!keep[m]) continue;
      remap[m] = static_cast<int>(p.mentions.size());
      p.mentions.push_back(doc.mentions[m]);
    }
    for (auto& c : clusters)
      for (int& m : c) m = remap[m];
    p.clusters = std::move(clusters);
    p.check();
    out.partial.push_back(std::move(p));
  }
  return out;
}

}  // namespace mdet
