// Domain value types: sentences, spans, opinion records.
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "easqe/errors.hpp"

namespace easqe {

// Framed sequences (sentence plus sentinels, plus the trigger copy in stage
// two) may not exceed 64 positions, so a raw sentence gets at most 62 tokens.
inline constexpr std::size_t kMaxFramedLen = 64;
inline constexpr std::size_t kMaxRawTokens = kMaxFramedLen - 2;

enum class Polarity { Positive, Neutral, Negative };

inline const char* to_string(Polarity p) {
  switch (p) {
    case Polarity::Positive: return "POS";
    case Polarity::Neutral: return "NEU";
    case Polarity::Negative: return "NEG";
  }
  return "POS";
}

inline std::optional<Polarity> polarity_from_string(const std::string& s) {
  if (s == "POS") return Polarity::Positive;
  if (s == "NEU") return Polarity::Neutral;
  if (s == "NEG") return Polarity::Negative;
  return std::nullopt;
}

enum class TaskKind { Easqe, Aste, Ope };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::Easqe: return "easqe";
    case TaskKind::Aste: return "aste";
    case TaskKind::Ope: return "ope";
  }
  return "easqe";
}

inline std::optional<TaskKind> task_from_string(const std::string& s) {
  if (s == "easqe") return TaskKind::Easqe;
  if (s == "aste") return TaskKind::Aste;
  if (s == "ope") return TaskKind::Ope;
  return std::nullopt;
}

struct Sentence {
  std::string id;
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
};

inline std::string join_tokens(const std::vector<std::string>& tokens,
                               std::size_t start, std::size_t end) {
  std::string out;
  for (std::size_t i = start; i < end; ++i) {
    if (i > start) out += ' ';
    out += tokens[i];
  }
  return out;
}

// Token-index span over a sentence, end exclusive. `text` mirrors the
// covered tokens so files stay human-checkable.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string text;

  auto operator<=>(const Span&) const = default;
};

inline Span make_span(const Sentence& s, std::size_t start, std::size_t end) {
  if (!(start < end && end <= s.size()))
    throw SpanOutOfBoundsError("span " + std::to_string(start) + ".." +
                               std::to_string(end) + " outside sentence '" +
                               s.id + "' of length " +
                               std::to_string(s.size()));
  return Span{start, end, join_tokens(s.tokens, start, end)};
}

struct Quadruple {
  std::optional<Span> entity;
  std::optional<Span> aspect;
  Span opinion;
  Polarity polarity = Polarity::Positive;

  auto operator<=>(const Quadruple&) const = default;
};

struct Triple {
  Span target;
  Span opinion;
  Polarity polarity = Polarity::Positive;

  auto operator<=>(const Triple&) const = default;
};

struct Pair {
  Span target;
  Span opinion;

  auto operator<=>(const Pair&) const = default;
};

enum class ViolationKind { BothTargetsNull, SpanOutOfBounds, TextMismatch };

struct Violation {
  ViolationKind kind;
  std::string field;
};

inline std::string to_string(const Violation& v) {
  switch (v.kind) {
    case ViolationKind::BothTargetsNull: return "BothTargetsNull";
    case ViolationKind::SpanOutOfBounds: return "SpanOutOfBounds(" + v.field + ")";
    case ViolationKind::TextMismatch: return "TextMismatch(" + v.field + ")";
  }
  return "Unknown";
}

namespace detail {
inline void check_span(const Span& sp, const std::string& field,
                       const Sentence& s, std::vector<Violation>& out) {
  if (!(sp.start < sp.end && sp.end <= s.size())) {
    out.push_back({ViolationKind::SpanOutOfBounds, field});
    return;
  }
  if (sp.text != join_tokens(s.tokens, sp.start, sp.end))
    out.push_back({ViolationKind::TextMismatch, field});
}
}  // namespace detail

// Violations are data, not failures: every broken invariant is reported.
inline std::vector<Violation> validate_quadruple(const Quadruple& q,
                                                 const Sentence& s) {
  std::vector<Violation> out;
  if (!q.entity && !q.aspect)
    out.push_back({ViolationKind::BothTargetsNull, "entity/aspect"});
  if (q.entity) detail::check_span(*q.entity, "entity", s, out);
  if (q.aspect) detail::check_span(*q.aspect, "aspect", s, out);
  detail::check_span(q.opinion, "opinion", s, out);
  return out;
}

// The quad -> triple projection rule: the entity wins when both targets are
// present, otherwise the one that is not null.
inline Triple project_to_triple(const Quadruple& q) {
  const Span& target = q.entity ? *q.entity : *q.aspect;
  return Triple{target, q.opinion, q.polarity};
}

inline Pair project_to_pair(const Triple& t) { return Pair{t.target, t.opinion}; }

}  // namespace easqe
