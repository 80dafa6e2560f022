// End-to-end extraction: stage-one opinion hits, trigger-conditioned
// stage-two target sets, and decoding into quadruples, triples, or pairs.
#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "easqe/core.hpp"
#include "easqe/encoder.hpp"
#include "easqe/errors.hpp"
#include "easqe/framing.hpp"
#include "easqe/tagger.hpp"
#include "easqe/tags.hpp"

namespace easqe {

struct OpinionHit {
  Span opinion;
  std::optional<Polarity> polarity;  // absent under the span-only scheme

  auto operator<=>(const OpinionHit&) const = default;
};

struct TargetSet {
  std::vector<Span> entities;
  std::vector<Span> aspects;

  bool empty() const { return entities.empty() && aspects.empty(); }
};

inline bool stage1_compatible(const TaggerModel& m, TaskKind task) {
  if (task == TaskKind::Ope) return m.scheme.kind == SchemeKind::Stage1Span;
  return m.scheme.kind == SchemeKind::Stage1Easqe;
}

inline bool stage2_compatible(const TaggerModel& m, TaskKind task) {
  switch (task) {
    case TaskKind::Easqe: return m.scheme.kind == SchemeKind::Stage2Easqe;
    case TaskKind::Aste:
      // Native ASTE training uses the aspect-only scheme; a quad-trained
      // stage two works as well and keeps its entity predictions.
      return m.scheme.kind == SchemeKind::Stage2Aspect ||
             m.scheme.kind == SchemeKind::Stage2Easqe;
    case TaskKind::Ope: return m.scheme.kind == SchemeKind::Stage2Aspect;
  }
  return false;
}

inline std::vector<OpinionHit> extract_opinions(
    const TaggerModel& model1, const Sentence& s,
    const ExternalEmbeddingStore* store = nullptr,
    std::size_t max_len = kMaxFramedLen) {
  if (model1.scheme.kind != SchemeKind::Stage1Easqe &&
      model1.scheme.kind != SchemeKind::Stage1Span)
    throw SchemeMismatchError("extract_opinions needs a stage-one model");
  FramedInput f = frame_stage1(s, max_len);
  Matrix raw =
      raw_scores(emission_scores(encode(f, model1.backend(store)), model1), f);
  TagSequence tags = viterbi(raw, model1);
  std::vector<OpinionHit> hits;
  for (const CategorizedSpan& cs : spans_from_tags(tags, s.tokens)) {
    OpinionHit hit{cs.span, std::nullopt};
    if (model1.scheme.kind == SchemeKind::Stage1Easqe)
      hit.polarity = model1.scheme.polarity_of_category(cs.category);
    hits.push_back(std::move(hit));
  }
  return hits;
}

inline TargetSet extract_targets(const TaggerModel& model2, const Sentence& s,
                                 const Span& opinion,
                                 const ExternalEmbeddingStore* store = nullptr,
                                 std::size_t max_len = kMaxFramedLen) {
  if (model2.scheme.kind != SchemeKind::Stage2Easqe &&
      model2.scheme.kind != SchemeKind::Stage2Aspect)
    throw SchemeMismatchError("extract_targets needs a stage-two model");
  FramedInput f = frame_stage2(s, opinion, max_len);
  Matrix raw =
      raw_scores(emission_scores(encode(f, model2.backend(store)), model2), f);
  TagSequence tags = viterbi(raw, model2);
  TargetSet targets;
  for (const CategorizedSpan& cs : spans_from_tags(tags, s.tokens)) {
    bool is_entity =
        model2.scheme.kind == SchemeKind::Stage2Easqe && cs.category == 0;
    (is_entity ? targets.entities : targets.aspects).push_back(cs.span);
  }
  return targets;
}

namespace detail {

template <class T>
inline void insert_unique(std::vector<T>& out, T value) {
  if (std::find(out.begin(), out.end(), value) == out.end())
    out.push_back(std::move(value));
}

}  // namespace detail

// Quadruplet decoding. Per hit: nothing when the target set is empty; the
// unique (entity, aspect) pair when exactly one of each; otherwise one quad
// per aspect with a null entity, or, failing aspects, one per entity with a
// null aspect. Entities are dropped whenever aspects exist and the pairing
// is not unique.
inline std::vector<Quadruple> decode_quadruples(
    const Sentence& s, const std::vector<OpinionHit>& hits,
    const std::vector<TargetSet>& targets_for) {
  (void)s;
  std::vector<Quadruple> out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const TargetSet& targets = targets_for[i];
    if (targets.empty()) continue;
    std::size_t q = targets.entities.size(), k = targets.aspects.size();
    Polarity polarity = hits[i].polarity.value();
    if (q * k == 1) {
      detail::insert_unique(out, Quadruple{targets.entities[0], targets.aspects[0],
                                           hits[i].opinion, polarity});
    } else if (k >= 1) {
      for (const Span& aspect : targets.aspects)
        detail::insert_unique(
            out, Quadruple{std::nullopt, aspect, hits[i].opinion, polarity});
    } else {
      for (const Span& entity : targets.entities)
        detail::insert_unique(
            out, Quadruple{entity, std::nullopt, hits[i].opinion, polarity});
    }
  }
  return out;
}

// ASTE decoding: e_0 when the pairing is unique, otherwise every non-null
// target carries the opinion.
inline std::vector<Triple> decode_triples_native(
    const Sentence& s, const std::vector<OpinionHit>& hits,
    const std::vector<TargetSet>& targets_for) {
  (void)s;
  std::vector<Triple> out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const TargetSet& targets = targets_for[i];
    if (targets.empty()) continue;
    std::size_t q = targets.entities.size(), k = targets.aspects.size();
    Polarity polarity = hits[i].polarity.value();
    if (q * k == 1) {
      detail::insert_unique(
          out, Triple{targets.entities[0], hits[i].opinion, polarity});
    } else if (k >= 1) {
      for (const Span& aspect : targets.aspects)
        detail::insert_unique(out, Triple{aspect, hits[i].opinion, polarity});
    } else {
      for (const Span& entity : targets.entities)
        detail::insert_unique(out, Triple{entity, hits[i].opinion, polarity});
    }
  }
  return out;
}

inline std::vector<Pair> decode_pairs(const Sentence& s,
                                      const std::vector<OpinionHit>& hits,
                                      const std::vector<TargetSet>& targets_for) {
  (void)s;
  std::vector<Pair> out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const TargetSet& targets = targets_for[i];
    if (targets.empty()) continue;
    std::size_t q = targets.entities.size(), k = targets.aspects.size();
    if (q * k == 1) {
      detail::insert_unique(out, Pair{targets.entities[0], hits[i].opinion});
    } else if (k >= 1) {
      for (const Span& aspect : targets.aspects)
        detail::insert_unique(out, Pair{aspect, hits[i].opinion});
    } else {
      for (const Span& entity : targets.entities)
        detail::insert_unique(out, Pair{entity, hits[i].opinion});
    }
  }
  return out;
}

struct Extraction {
  TaskKind task = TaskKind::Easqe;
  std::vector<Quadruple> quads;
  std::vector<Triple> triples;
  std::vector<Pair> pairs;
};

inline Extraction predict(const TaggerModel& model1, const TaggerModel& model2,
                          const Sentence& s, TaskKind task,
                          const ExternalEmbeddingStore* store = nullptr,
                          std::size_t max_len = kMaxFramedLen) {
  if (!stage1_compatible(model1, task))
    throw SchemeMismatchError("stage-one model scheme does not fit task " +
                              std::string(to_string(task)));
  if (!stage2_compatible(model2, task))
    throw SchemeMismatchError("stage-two model scheme does not fit task " +
                              std::string(to_string(task)));
  std::vector<OpinionHit> hits = extract_opinions(model1, s, store, max_len);
  std::vector<TargetSet> targets_for;
  targets_for.reserve(hits.size());
  for (const OpinionHit& hit : hits)
    targets_for.push_back(extract_targets(model2, s, hit.opinion, store, max_len));
  Extraction out;
  out.task = task;
  switch (task) {
    case TaskKind::Easqe:
      out.quads = decode_quadruples(s, hits, targets_for);
      break;
    case TaskKind::Aste:
      out.triples = decode_triples_native(s, hits, targets_for);
      break;
    case TaskKind::Ope:
      out.pairs = decode_pairs(s, hits, targets_for);
      break;
  }
  return out;
}

}  // namespace easqe
