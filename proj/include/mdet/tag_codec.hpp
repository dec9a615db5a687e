#pragma once

// Bracket tag language for nested mentions.
//
// A sentence of M words is tagged by a sequence over four symbols. For each
// word, in order: any number of "[" (a mention starts here), then any number
// of "]" (a mention ends here), then exactly one advance symbol: "+" if some
// bracket is still open, "-" otherwise. The pointer into the sentence moves
// to the next word only after an advance symbol. "]" closes the most recently
// opened bracket, so the language encodes exactly the laminar span families.

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdet {

enum class TagSymbol : std::uint8_t { Open = 0, Close = 1, AdvanceIn = 2, AdvanceOut = 3 };

inline constexpr int kNumTagSymbols = 4;
inline constexpr int kDefaultDepthCap = 8;

const char* symbol_text(TagSymbol s);
const char* symbol_name(TagSymbol s);
inline bool is_advance(TagSymbol s) { return s == TagSymbol::AdvanceIn || s == TagSymbol::AdvanceOut; }

// Inclusive word span within a sentence (or document, depending on context).
struct MentionSpan {
  int start = 0;
  int end = 0;
  auto operator<=>(const MentionSpan&) const = default;
};

std::string to_string(const MentionSpan& s);

struct TagSequence {
  std::vector<TagSymbol> symbols;
  // Word index the pointer is at when each symbol is emitted.
  std::vector<int> alignment;

  std::size_t size() const { return symbols.size(); }
  bool operator==(const TagSequence&) const = default;
};

// Pointer position for every symbol: starts at word 0, moves after "+"/"-".
std::vector<int> pointer_alignment(const std::vector<TagSymbol>& symbols);
TagSequence make_sequence(std::vector<TagSymbol> symbols);

// Space separated rendering, e.g. "[ + ] -".
std::string render_tags(const std::vector<TagSymbol>& symbols);
std::vector<TagSymbol> parse_tags(const std::string& text);

enum class TagViolation {
  CloseAtDepthZero,
  AdvanceInAtDepthZero,
  AdvanceOutWhileOpen,
  OpenAfterClose,
  DuplicateSpan,
  DepthExceeded,
  SymbolAfterLastWord,
  MissingAdvance,
  UnclosedAtEnd,
};

const char* violation_name(TagViolation v);

struct ValidationReport {
  bool ok = true;
  int position = -1;
  TagViolation kind{};
  std::string message;
};

class TagError : public std::runtime_error {
 public:
  explicit TagError(ValidationReport report) : std::runtime_error(report.message), report_(std::move(report)) {}
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

// Incremental parser state; also the source of the decoder's masks.
struct GrammarState {
  int word = 0;
  std::vector<int> open_starts;  // start word of every open bracket, bottom to top
  bool closing = false;          // a "]" was emitted at the current word
  int last_closed_start = -1;    // start of the span most recently closed at this word

  int depth() const { return static_cast<int>(open_starts.size()); }
  bool operator==(const GrammarState&) const = default;
};

// Violation the symbol would cause in `state`, if any.
std::optional<TagViolation> check_symbol(const GrammarState& state, TagSymbol s, int num_words, int depth_cap);
// Applies a symbol already accepted by check_symbol. Returns the span closed
// by "]", if any.
std::optional<MentionSpan> apply_symbol(GrammarState& state, TagSymbol s);
// True when some continuation of `state` reaches a complete valid sequence.
bool completable(const GrammarState& state, int num_words);
bool finished(const GrammarState& state, int num_words);

ValidationReport validate(const std::vector<TagSymbol>& symbols, int num_words, int depth_cap = kDefaultDepthCap);

// Throws TagError on non-laminar input, duplicates, out-of-range spans, or
// nesting deeper than depth_cap.
TagSequence encode_mentions(std::vector<MentionSpan> spans, int num_words, int depth_cap = kDefaultDepthCap);

// Sorted spans; throws TagError at the first position validate() rejects.
std::vector<MentionSpan> decode_tags(const std::vector<TagSymbol>& symbols, int num_words,
                                     int depth_cap = kDefaultDepthCap);

bool crosses(const MentionSpan& a, const MentionSpan& b);
bool is_laminar(const std::vector<MentionSpan>& spans);
int nesting_depth(const std::vector<MentionSpan>& spans);

// Largest subset kept by scanning (start asc, end desc) and keeping every
// span that neither crosses nor duplicates an already kept one. Sorted.
std::vector<MentionSpan> laminarize(std::vector<MentionSpan> spans);

}  // namespace mdet
