// BIO tag schemes and conversion between label sequences and spans.
#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "easqe/core.hpp"
#include "easqe/errors.hpp"

namespace easqe {

enum class SchemeKind {
  Stage1Easqe,   // O, B-POS, I-POS, B-NEU, I-NEU, B-NEG, I-NEG
  Stage1Span,    // O, B, I
  Stage2Easqe,   // O, B-ENT, I-ENT, B-ASP, I-ASP
  Stage2Aspect,  // O, B-ASP, I-ASP
};

inline const char* to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::Stage1Easqe: return "stage1_easqe";
    case SchemeKind::Stage1Span: return "stage1_span";
    case SchemeKind::Stage2Easqe: return "stage2_easqe";
    case SchemeKind::Stage2Aspect: return "stage2_aspect";
  }
  return "stage1_easqe";
}

inline std::optional<SchemeKind> scheme_from_string(const std::string& s) {
  if (s == "stage1_easqe") return SchemeKind::Stage1Easqe;
  if (s == "stage1_span") return SchemeKind::Stage1Span;
  if (s == "stage2_easqe") return SchemeKind::Stage2Easqe;
  if (s == "stage2_aspect") return SchemeKind::Stage2Aspect;
  return std::nullopt;
}

// Label layout is fixed: O at index 0, then B/I pairs per category, so
// B(cat) = 1 + 2*cat and I(cat) = 2 + 2*cat.
struct TagScheme {
  SchemeKind kind = SchemeKind::Stage1Easqe;

  static constexpr int kOutside = 0;

  int num_categories() const {
    switch (kind) {
      case SchemeKind::Stage1Easqe: return 3;
      case SchemeKind::Stage1Span: return 1;
      case SchemeKind::Stage2Easqe: return 2;
      case SchemeKind::Stage2Aspect: return 1;
    }
    return 1;
  }

  int num_labels() const { return 1 + 2 * num_categories(); }

  int begin_label(int category) const { return 1 + 2 * category; }
  int inside_label(int category) const { return 2 + 2 * category; }

  static bool is_begin(int label) { return label > 0 && label % 2 == 1; }
  static bool is_inside(int label) { return label > 0 && label % 2 == 0; }
  static int category_of(int label) { return (label - 1) / 2; }

  std::string category_name(int category) const {
    switch (kind) {
      case SchemeKind::Stage1Easqe: {
        const char* names[] = {"POS", "NEU", "NEG"};
        return names[category];
      }
      case SchemeKind::Stage1Span: return "";
      case SchemeKind::Stage2Easqe: {
        const char* names[] = {"ENT", "ASP"};
        return names[category];
      }
      case SchemeKind::Stage2Aspect: return "ASP";
    }
    return "";
  }

  std::string label_name(int label) const {
    if (label == kOutside) return "O";
    std::string prefix = is_begin(label) ? "B" : "I";
    std::string cat = category_name(category_of(label));
    return cat.empty() ? prefix : prefix + "-" + cat;
  }

  // Stage-1 EASQE categories are polarities in POS, NEU, NEG order.
  Polarity polarity_of_category(int category) const {
    static constexpr Polarity kOrder[] = {Polarity::Positive, Polarity::Neutral,
                                          Polarity::Negative};
    return kOrder[category];
  }

  int category_of_polarity(Polarity p) const {
    return static_cast<int>(p);
  }

  bool operator==(const TagScheme&) const = default;
};

struct TagSequence {
  TagScheme scheme;
  std::vector<int> labels;  // one per raw token, sentinels excluded

  std::size_t size() const { return labels.size(); }

  bool bio_valid() const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      int label = labels[i];
      if (label < 0 || label >= scheme.num_labels()) return false;
      if (TagScheme::is_inside(label)) {
        if (i == 0) return false;
        int prev = labels[i - 1];
        if (prev == TagScheme::kOutside) return false;
        if (TagScheme::category_of(prev) != TagScheme::category_of(label))
          return false;
      }
    }
    return true;
  }

  bool operator==(const TagSequence&) const = default;
};

struct CategorizedSpan {
  Span span;
  int category = 0;

  auto operator<=>(const CategorizedSpan&) const = default;
};

// Maximal B-x (I-x)* runs become spans, left to right. `tokens` supplies the
// surface text and must match the label count.
inline std::vector<CategorizedSpan> spans_from_tags(
    const TagSequence& tags, const std::vector<std::string>& tokens) {
  if (tokens.size() != tags.labels.size())
    throw DimensionMismatchError("tag/token length mismatch: " +
                                 std::to_string(tags.labels.size()) + " vs " +
                                 std::to_string(tokens.size()));
  std::vector<CategorizedSpan> out;
  std::size_t open_start = 0;
  int open_category = -1;
  auto close = [&](std::size_t end) {
    if (open_category >= 0) {
      out.push_back({Span{open_start, end, join_tokens(tokens, open_start, end)},
                     open_category});
      open_category = -1;
    }
  };
  for (std::size_t i = 0; i < tags.labels.size(); ++i) {
    int label = tags.labels[i];
    if (label < 0 || label >= tags.scheme.num_labels())
      throw InvalidBioError("label index " + std::to_string(label) +
                            " outside scheme at position " + std::to_string(i));
    if (label == TagScheme::kOutside) {
      close(i);
    } else if (TagScheme::is_begin(label)) {
      close(i);
      open_start = i;
      open_category = TagScheme::category_of(label);
    } else {  // inside
      if (open_category != TagScheme::category_of(label))
        throw InvalidBioError("I-" +
                              tags.scheme.category_name(
                                  TagScheme::category_of(label)) +
                              " at position " + std::to_string(i) +
                              " has no compatible predecessor");
    }
  }
  close(tags.labels.size());
  return out;
}

// Inverse of spans_from_tags: positions outside the spans are O.
inline TagSequence tags_from_spans(const std::vector<CategorizedSpan>& spans,
                                   std::size_t length, const TagScheme& scheme) {
  TagSequence tags{scheme, std::vector<int>(length, TagScheme::kOutside)};
  std::vector<CategorizedSpan> sorted = spans;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.span.start, a.span.end) < std::tie(b.span.start, b.span.end);
  });
  std::size_t covered_up_to = 0;
  bool first = true;
  for (const auto& cs : sorted) {
    if (cs.category < 0 || cs.category >= scheme.num_categories())
      throw CategoryError("category " + std::to_string(cs.category) +
                          " not in scheme " + to_string(scheme.kind));
    if (!(cs.span.start < cs.span.end && cs.span.end <= length))
      throw SpanOutOfBoundsError("span " + std::to_string(cs.span.start) + ".." +
                                 std::to_string(cs.span.end) +
                                 " outside length " + std::to_string(length));
    if (!first && cs.span.start < covered_up_to)
      throw OverlapError("span starting at " + std::to_string(cs.span.start) +
                         " overlaps a previous span");
    first = false;
    covered_up_to = cs.span.end;
    tags.labels[cs.span.start] = scheme.begin_label(cs.category);
    for (std::size_t i = cs.span.start + 1; i < cs.span.end; ++i)
      tags.labels[i] = scheme.inside_label(cs.category);
  }
  return tags;
}

}  // namespace easqe
