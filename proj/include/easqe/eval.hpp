// Exact-match micro precision/recall/F1 at tuple and element granularity.
#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "easqe/dataset.hpp"
#include "easqe/pipeline.hpp"

namespace easqe {

struct PrfRow {
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  double precision() const {
    return predicted == 0 ? 0.0
                          : static_cast<double>(matched) /
                                static_cast<double>(predicted);
  }
  double recall() const {
    return gold == 0 ? 0.0
                     : static_cast<double>(matched) / static_cast<double>(gold);
  }
  double f1() const {
    double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro counts over per-sentence annotation sets. Matching is full
// structural equality, null placement included.
template <class T>
inline PrfRow exact_match_counts(
    const std::map<std::string, std::vector<T>>& gold,
    const std::map<std::string, std::vector<T>>& pred) {
  PrfRow row;
  for (const auto& [id, items] : gold) {
    std::set<T> unique(items.begin(), items.end());
    row.gold += unique.size();
  }
  for (const auto& [id, items] : pred) {
    std::set<T> unique(items.begin(), items.end());
    row.predicted += unique.size();
    auto git = gold.find(id);
    if (git == gold.end()) continue;
    std::set<T> gold_unique(git->second.begin(), git->second.end());
    for (const T& item : unique)
      if (gold_unique.count(item)) ++row.matched;
  }
  return row;
}

template <class T>
inline Prf exact_match_prf(const std::map<std::string, std::vector<T>>& gold,
                           const std::map<std::string, std::vector<T>>& pred) {
  PrfRow row = exact_match_counts(gold, pred);
  return Prf{row.precision(), row.recall(), row.f1()};
}

struct EvalReport {
  TaskKind task = TaskKind::Easqe;
  // Ordered rows: tuple granularities first, then element categories.
  std::vector<std::pair<std::string, PrfRow>> rows;

  const PrfRow* find(const std::string& name) const {
    for (const auto& [n, row] : rows)
      if (n == name) return &row;
    return nullptr;
  }
};

namespace detail {

using PolaritySpan = std::pair<Span, Polarity>;

struct SentenceAnnotations {
  std::map<std::string, std::vector<Quadruple>> quads;
  std::map<std::string, std::vector<Triple>> triples;
  std::map<std::string, std::vector<Pair>> pairs;
  std::map<std::string, std::vector<Span>> entities, aspects, opinions, targets;
  std::map<std::string, std::vector<PolaritySpan>> polarity_spans;
};

inline void add_extraction(SentenceAnnotations& acc, const std::string& id,
                           TaskKind task, const std::vector<Quadruple>& quads,
                           const std::vector<Triple>& triples,
                           const std::vector<Pair>& pairs) {
  switch (task) {
    case TaskKind::Easqe: {
      acc.quads[id] = quads;
      auto& triple_list = acc.triples[id];
      auto& pair_list = acc.pairs[id];
      for (const Quadruple& q : quads) {
        Triple t = project_to_triple(q);
        if (std::find(triple_list.begin(), triple_list.end(), t) == triple_list.end())
          triple_list.push_back(t);
        Pair p = project_to_pair(t);
        if (std::find(pair_list.begin(), pair_list.end(), p) == pair_list.end())
          pair_list.push_back(p);
        if (q.entity) acc.entities[id].push_back(*q.entity);
        if (q.aspect) acc.aspects[id].push_back(*q.aspect);
        acc.opinions[id].push_back(q.opinion);
        acc.polarity_spans[id].push_back({q.opinion, q.polarity});
      }
      break;
    }
    case TaskKind::Aste: {
      acc.triples[id] = triples;
      auto& pair_list = acc.pairs[id];
      for (const Triple& t : triples) {
        Pair p = project_to_pair(t);
        if (std::find(pair_list.begin(), pair_list.end(), p) == pair_list.end())
          pair_list.push_back(p);
        acc.targets[id].push_back(t.target);
        acc.opinions[id].push_back(t.opinion);
        acc.polarity_spans[id].push_back({t.opinion, t.polarity});
      }
      break;
    }
    case TaskKind::Ope: {
      acc.pairs[id] = pairs;
      for (const Pair& p : pairs) {
        acc.targets[id].push_back(p.target);
        acc.opinions[id].push_back(p.opinion);
      }
      break;
    }
  }
}

}  // namespace detail

// Predicts every sentence and micro-aggregates exact matches per
// granularity. EASQE reports also include the triple/pair projections for
// cross-task comparison.
inline EvalReport evaluate(const TaggerModel& model1, const TaggerModel& model2,
                           const Dataset& dataset, TaskKind task,
                           const ExternalEmbeddingStore* store = nullptr,
                           std::size_t max_len = kMaxFramedLen) {
  if (dataset.task != task)
    throw SchemeMismatchError("dataset task does not match evaluation task");
  detail::SentenceAnnotations gold, pred;
  for (const Record& r : dataset.records) {
    detail::add_extraction(gold, r.sentence.id, task, r.quads, r.triples, r.pairs);
    Extraction ex = predict(model1, model2, r.sentence, task, store, max_len);
    detail::add_extraction(pred, r.sentence.id, task, ex.quads, ex.triples, ex.pairs);
  }

  EvalReport report;
  report.task = task;
  switch (task) {
    case TaskKind::Easqe:
      report.rows.emplace_back("quad", exact_match_counts(gold.quads, pred.quads));
      report.rows.emplace_back("triple", exact_match_counts(gold.triples, pred.triples));
      report.rows.emplace_back("pair", exact_match_counts(gold.pairs, pred.pairs));
      report.rows.emplace_back("entity", exact_match_counts(gold.entities, pred.entities));
      report.rows.emplace_back("aspect", exact_match_counts(gold.aspects, pred.aspects));
      report.rows.emplace_back("opinion", exact_match_counts(gold.opinions, pred.opinions));
      report.rows.emplace_back("polarity",
                               exact_match_counts(gold.polarity_spans, pred.polarity_spans));
      break;
    case TaskKind::Aste:
      report.rows.emplace_back("triple", exact_match_counts(gold.triples, pred.triples));
      report.rows.emplace_back("pair", exact_match_counts(gold.pairs, pred.pairs));
      report.rows.emplace_back("target", exact_match_counts(gold.targets, pred.targets));
      report.rows.emplace_back("opinion", exact_match_counts(gold.opinions, pred.opinions));
      report.rows.emplace_back("polarity",
                               exact_match_counts(gold.polarity_spans, pred.polarity_spans));
      break;
    case TaskKind::Ope:
      report.rows.emplace_back("pair", exact_match_counts(gold.pairs, pred.pairs));
      report.rows.emplace_back("target", exact_match_counts(gold.targets, pred.targets));
      report.rows.emplace_back("opinion", exact_match_counts(gold.opinions, pred.opinions));
      break;
  }
  return report;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["task"] = to_string(report.task);
  nlohmann::json rows = nlohmann::json::object();
  for (const auto& [name, row] : report.rows)
    rows[name] = {{"matched", row.matched},   {"predicted", row.predicted},
                  {"gold", row.gold},         {"precision", row.precision()},
                  {"recall", row.recall()},   {"f1", row.f1()}};
  j["rows"] = std::move(rows);
  return j;
}

inline void print_report(const EvalReport& report, std::ostream& out) {
  out << "task: " << to_string(report.task) << "\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s%8s%8s%8s%10s%10s%10s", "row",
                "match", "pred", "gold", "P", "R", "F1");
  out << line << "\n";
  for (const auto& [name, row] : report.rows) {
    std::snprintf(line, sizeof(line), "%-10s%8zu%8zu%8zu%10.4f%10.4f%10.4f",
                  name.c_str(), row.matched, row.predicted, row.gold,
                  row.precision(), row.recall(), row.f1());
    out << line << "\n";
  }
}

}  // namespace easqe
