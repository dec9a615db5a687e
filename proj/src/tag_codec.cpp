#include "mdet/tag_codec.hpp"

#include <algorithm>
#include <sstream>

namespace mdet {

const char* symbol_text(TagSymbol s) {
  switch (s) {
    case TagSymbol::Open: return "[";
    case TagSymbol::Close: return "]";
    case TagSymbol::AdvanceIn: return "+";
    case TagSymbol::AdvanceOut: return "-";
  }
  return "?";
}

const char* symbol_name(TagSymbol s) {
  switch (s) {
    case TagSymbol::Open: return "OPEN";
    case TagSymbol::Close: return "CLOSE";
    case TagSymbol::AdvanceIn: return "ADVANCE_IN";
    case TagSymbol::AdvanceOut: return "ADVANCE_OUT";
  }
  return "?";
}

std::string to_string(const MentionSpan& s) {
  return "(" + std::to_string(s.start) + "," + std::to_string(s.end) + ")";
}

std::vector<int> pointer_alignment(const std::vector<TagSymbol>& symbols) {
  std::vector<int> out;
  out.reserve(symbols.size());
  int word = 0;
  for (TagSymbol s : symbols) {
    out.push_back(word);
    if (is_advance(s)) ++word;
  }
  return out;
}

TagSequence make_sequence(std::vector<TagSymbol> symbols) {
  TagSequence seq;
  seq.alignment = pointer_alignment(symbols);
  seq.symbols = std::move(symbols);
  return seq;
}

std::string render_tags(const std::vector<TagSymbol>& symbols) {
  std::string out;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i) out += ' ';
    out += symbol_text(symbols[i]);
  }
  return out;
}

std::vector<TagSymbol> parse_tags(const std::string& text) {
  std::vector<TagSymbol> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    if (tok == "[") out.push_back(TagSymbol::Open);
    else if (tok == "]") out.push_back(TagSymbol::Close);
    else if (tok == "+") out.push_back(TagSymbol::AdvanceIn);
    else if (tok == "-") out.push_back(TagSymbol::AdvanceOut);
    else throw std::invalid_argument("unknown tag symbol '" + tok + "'");
  }
  return out;
}

const char* violation_name(TagViolation v) {
  switch (v) {
    case TagViolation::CloseAtDepthZero: return "CLOSE at depth 0";
    case TagViolation::AdvanceInAtDepthZero: return "ADVANCE_IN at depth 0";
    case TagViolation::AdvanceOutWhileOpen: return "ADVANCE_OUT with open brackets";
    case TagViolation::OpenAfterClose: return "OPEN after CLOSE at the same word";
    case TagViolation::DuplicateSpan: return "CLOSE repeats the span just closed";
    case TagViolation::DepthExceeded: return "nesting depth cap exceeded";
    case TagViolation::SymbolAfterLastWord: return "symbol after the last word";
    case TagViolation::MissingAdvance: return "fewer advance symbols than words";
    case TagViolation::UnclosedAtEnd: return "unclosed bracket at end";
  }
  return "?";
}

std::optional<TagViolation> check_symbol(const GrammarState& st, TagSymbol s, int num_words, int depth_cap) {
  if (st.word >= num_words) return TagViolation::SymbolAfterLastWord;
  switch (s) {
    case TagSymbol::Open:
      if (st.closing) return TagViolation::OpenAfterClose;
      if (st.depth() >= depth_cap) return TagViolation::DepthExceeded;
      return std::nullopt;
    case TagSymbol::Close:
      if (st.depth() == 0) return TagViolation::CloseAtDepthZero;
      if (st.closing && st.open_starts.back() == st.last_closed_start) return TagViolation::DuplicateSpan;
      return std::nullopt;
    case TagSymbol::AdvanceIn:
      if (st.depth() == 0) return TagViolation::AdvanceInAtDepthZero;
      return std::nullopt;
    case TagSymbol::AdvanceOut:
      if (st.depth() != 0) return TagViolation::AdvanceOutWhileOpen;
      return std::nullopt;
  }
  return std::nullopt;
}

std::optional<MentionSpan> apply_symbol(GrammarState& st, TagSymbol s) {
  switch (s) {
    case TagSymbol::Open:
      st.open_starts.push_back(st.word);
      return std::nullopt;
    case TagSymbol::Close: {
      MentionSpan span{st.open_starts.back(), st.word};
      st.open_starts.pop_back();
      st.closing = true;
      st.last_closed_start = span.start;
      return span;
    }
    case TagSymbol::AdvanceIn:
    case TagSymbol::AdvanceOut:
      ++st.word;
      st.closing = false;
      st.last_closed_start = -1;
      return std::nullopt;
  }
  return std::nullopt;
}

bool finished(const GrammarState& st, int num_words) { return st.word == num_words && st.depth() == 0; }

bool completable(const GrammarState& st, int num_words) {
  if (st.word >= num_words) return st.depth() == 0;
  // Close every open bracket as early as possible: brackets sharing a start
  // must close at distinct words, otherwise they would denote the same span.
  int word = st.word;
  int prev_start = st.closing ? st.last_closed_start : -1;
  for (auto it = st.open_starts.rbegin(); it != st.open_starts.rend(); ++it) {
    if (*it == prev_start) ++word;
    prev_start = *it;
  }
  return word < num_words;
}

namespace {

ValidationReport violation_at(int position, TagViolation kind, int depth) {
  ValidationReport r;
  r.ok = false;
  r.position = position;
  r.kind = kind;
  r.message = std::string(violation_name(kind));
  if (kind == TagViolation::AdvanceOutWhileOpen || kind == TagViolation::UnclosedAtEnd ||
      kind == TagViolation::DepthExceeded) {
    r.message += " (depth " + std::to_string(depth) + ")";
  }
  r.message += ", position " + std::to_string(position);
  return r;
}

}  // namespace

ValidationReport validate(const std::vector<TagSymbol>& symbols, int num_words, int depth_cap) {
  GrammarState st;
  for (std::size_t p = 0; p < symbols.size(); ++p) {
    if (auto v = check_symbol(st, symbols[p], num_words, depth_cap)) {
      return violation_at(static_cast<int>(p), *v, st.depth());
    }
    apply_symbol(st, symbols[p]);
  }
  const int end = static_cast<int>(symbols.size());
  if (st.word < num_words) return violation_at(end, TagViolation::MissingAdvance, st.depth());
  if (st.depth() != 0) return violation_at(end, TagViolation::UnclosedAtEnd, st.depth());
  return {};
}

bool crosses(const MentionSpan& a, const MentionSpan& b) {
  return (a.start < b.start && b.start <= a.end && a.end < b.end) ||
         (b.start < a.start && a.start <= b.end && b.end < a.end);
}

bool is_laminar(const std::vector<MentionSpan>& spans) {
  for (std::size_t i = 0; i < spans.size(); ++i)
    for (std::size_t j = i + 1; j < spans.size(); ++j)
      if (crosses(spans[i], spans[j])) return false;
  return true;
}

int nesting_depth(const std::vector<MentionSpan>& spans) {
  int best = 0;
  for (const auto& s : spans) {
    int d = 0;
    for (const auto& t : spans)
      if (t.start <= s.start && s.end <= t.end) ++d;
    best = std::max(best, d);
  }
  return best;
}

namespace {

[[noreturn]] void encode_error(const std::string& msg) {
  ValidationReport r;
  r.ok = false;
  r.message = msg;
  throw TagError(r);
}

bool by_start_then_longest(const MentionSpan& a, const MentionSpan& b) {
  return a.start != b.start ? a.start < b.start : a.end > b.end;
}

}  // namespace

TagSequence encode_mentions(std::vector<MentionSpan> spans, int num_words, int depth_cap) {
  if (num_words < 0) encode_error("negative word count");
  for (const auto& s : spans) {
    if (s.start < 0 || s.start > s.end || s.end >= num_words) {
      encode_error("span " + to_string(s) + " out of range for " + std::to_string(num_words) + " words");
    }
  }
  std::sort(spans.begin(), spans.end(), by_start_then_longest);
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i] == spans[i - 1]) encode_error("duplicate span " + to_string(spans[i]));
  }
  for (std::size_t i = 0; i < spans.size(); ++i)
    for (std::size_t j = i + 1; j < spans.size(); ++j)
      if (crosses(spans[i], spans[j])) {
        encode_error("crossing spans " + to_string(spans[i]) + " and " + to_string(spans[j]));
      }

  std::vector<TagSymbol> out;
  out.reserve(num_words + 2 * spans.size());
  std::vector<int> open_ends;
  std::size_t next = 0;
  for (int w = 0; w < num_words; ++w) {
    for (; next < spans.size() && spans[next].start == w; ++next) {
      open_ends.push_back(spans[next].end);
      if (static_cast<int>(open_ends.size()) > depth_cap) {
        encode_error("span " + to_string(spans[next]) + " nests deeper than cap " + std::to_string(depth_cap));
      }
      out.push_back(TagSymbol::Open);
    }
    while (!open_ends.empty() && open_ends.back() == w) {
      open_ends.pop_back();
      out.push_back(TagSymbol::Close);
    }
    out.push_back(open_ends.empty() ? TagSymbol::AdvanceOut : TagSymbol::AdvanceIn);
  }
  return make_sequence(std::move(out));
}

std::vector<MentionSpan> decode_tags(const std::vector<TagSymbol>& symbols, int num_words, int depth_cap) {
  ValidationReport report = validate(symbols, num_words, depth_cap);
  if (!report.ok) throw TagError(report);
  GrammarState st;
  std::vector<MentionSpan> out;
  for (TagSymbol s : symbols) {
    if (auto span = apply_symbol(st, s)) out.push_back(*span);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<MentionSpan> laminarize(std::vector<MentionSpan> spans) {
  std::sort(spans.begin(), spans.end(), by_start_then_longest);
  std::vector<MentionSpan> kept;
  for (const auto& s : spans) {
    bool ok = true;
    for (const auto& k : kept) {
      if (k == s || crosses(k, s)) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(s);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace mdet
