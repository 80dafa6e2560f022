// Dataset file formats, validation, task conversion, statistics, diffing.
//
// Native format is JSONL: one object per line with "id", "tokens", and a
// "quads"/"triples"/"pairs" list depending on the task. A separate reader
// accepts the legacy  sentence####[([a..],[o..],'POL'), ...]  triplet lines.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "easqe/core.hpp"
#include "easqe/errors.hpp"

namespace easqe {

struct Record {
  Sentence sentence;
  std::vector<Quadruple> quads;   // task == Easqe
  std::vector<Triple> triples;    // task == Aste
  std::vector<Pair> pairs;        // task == Ope
};

struct Dataset {
  std::string name;
  TaskKind task = TaskKind::Easqe;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  std::size_t annotation_count() const {
    std::size_t n = 0;
    for (const Record& r : records)
      n += r.quads.size() + r.triples.size() + r.pairs.size();
    return n;
  }
};

struct StatsReport {
  std::size_t sentence_count = 0;
  std::size_t quad_count = 0;
  double co_occurrence_pct = 0.0;  // % sentences with an entity+aspect quad
};

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

// --- JSONL serialization -----------------------------------------------------

namespace detail {

inline nlohmann::json span_to_json(const Span& s) {
  return {{"start", s.start}, {"end", s.end}, {"text", s.text}};
}

inline Span span_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("start") || !j.contains("end") ||
      !j.contains("text"))
    throw FormatError("span object needs start/end/text");
  return Span{j["start"].get<std::size_t>(), j["end"].get<std::size_t>(),
              j["text"].get<std::string>()};
}

inline Polarity polarity_from_json(const nlohmann::json& j) {
  auto p = polarity_from_string(j.get<std::string>());
  if (!p) throw FormatError("unknown polarity '" + j.get<std::string>() + "'");
  return *p;
}

inline nlohmann::json record_to_json(const Record& r, TaskKind task) {
  nlohmann::json j;
  j["id"] = r.sentence.id;
  j["tokens"] = r.sentence.tokens;
  switch (task) {
    case TaskKind::Easqe: {
      nlohmann::json quads = nlohmann::json::array();
      for (const Quadruple& q : r.quads) {
        nlohmann::json item;
        item["entity"] = q.entity ? span_to_json(*q.entity) : nlohmann::json();
        item["aspect"] = q.aspect ? span_to_json(*q.aspect) : nlohmann::json();
        item["opinion"] = span_to_json(q.opinion);
        item["polarity"] = to_string(q.polarity);
        quads.push_back(std::move(item));
      }
      j["quads"] = std::move(quads);
      break;
    }
    case TaskKind::Aste: {
      nlohmann::json triples = nlohmann::json::array();
      for (const Triple& t : r.triples)
        triples.push_back({{"target", span_to_json(t.target)},
                           {"opinion", span_to_json(t.opinion)},
                           {"polarity", to_string(t.polarity)}});
      j["triples"] = std::move(triples);
      break;
    }
    case TaskKind::Ope: {
      nlohmann::json pairs = nlohmann::json::array();
      for (const Pair& p : r.pairs)
        pairs.push_back({{"target", span_to_json(p.target)},
                         {"opinion", span_to_json(p.opinion)}});
      j["pairs"] = std::move(pairs);
      break;
    }
  }
  return j;
}

template <class T>
inline std::vector<T> dedupe_preserving_order(const std::vector<T>& items,
                                                std::size_t* dropped) {
  std::vector<T> out;
  for (const T& item : items) {
    if (std::find(out.begin(), out.end(), item) == out.end())
      out.push_back(item);
    else if (dropped)
      ++*dropped;
  }
  return out;
}

}  // namespace detail

inline Record record_from_json(const nlohmann::json& j, TaskKind task,
                               std::size_t line_no) {
  if (!j.is_object()) throw ParseError(line_no, "record is not a JSON object");
  if (!j.contains("id") || !j["id"].is_string())
    throw ParseError(line_no, "missing string field 'id'");
  if (!j.contains("tokens") || !j["tokens"].is_array())
    throw ParseError(line_no, "missing array field 'tokens'");
  Record r;
  r.sentence.id = j["id"].get<std::string>();
  for (const auto& t : j["tokens"]) {
    if (!t.is_string()) throw ParseError(line_no, "token is not a string");
    r.sentence.tokens.push_back(t.get<std::string>());
  }
  const char* key = task == TaskKind::Easqe  ? "quads"
                    : task == TaskKind::Aste ? "triples"
                                             : "pairs";
  if (!j.contains(key) || !j[key].is_array())
    throw ParseError(line_no, std::string("missing array field '") + key + "'");
  try {
    for (const auto& item : j[key]) {
      switch (task) {
        case TaskKind::Easqe: {
          Quadruple q;
          if (!item.contains("opinion"))
            throw FormatError("quad without opinion");
          if (item.contains("entity") && !item["entity"].is_null())
            q.entity = detail::span_from_json(item["entity"]);
          if (item.contains("aspect") && !item["aspect"].is_null())
            q.aspect = detail::span_from_json(item["aspect"]);
          q.opinion = detail::span_from_json(item["opinion"]);
          q.polarity = detail::polarity_from_json(item.at("polarity"));
          r.quads.push_back(std::move(q));
          break;
        }
        case TaskKind::Aste:
          r.triples.push_back(Triple{detail::span_from_json(item.at("target")),
                                     detail::span_from_json(item.at("opinion")),
                                     detail::polarity_from_json(item.at("polarity"))});
          break;
        case TaskKind::Ope:
          r.pairs.push_back(Pair{detail::span_from_json(item.at("target")),
                                 detail::span_from_json(item.at("opinion"))});
          break;
      }
    }
  } catch (const FormatError& e) {
    throw ParseError(line_no, e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line_no, e.what());
  }
  return r;
}

// Collects every violated invariant of the record; empty means valid.
inline std::vector<std::string> record_violations(const Record& r,
                                                  TaskKind task,
                                                  std::size_t max_raw_tokens) {
  std::vector<std::string> out;
  const Sentence& s = r.sentence;
  if (s.id.empty()) out.push_back("empty sentence id");
  if (s.tokens.empty()) out.push_back("sentence has no tokens");
  if (s.tokens.size() > max_raw_tokens)
    out.push_back("sentence exceeds " + std::to_string(max_raw_tokens) + " tokens");
  for (const std::string& t : s.tokens)
    if (t.empty()) {
      out.push_back("empty token string");
      break;
    }
  auto check_span = [&](const Span& sp, const std::string& field) {
    if (!(sp.start < sp.end && sp.end <= s.size()))
      out.push_back("SpanOutOfBounds(" + field + ")");
    else if (sp.text != join_tokens(s.tokens, sp.start, sp.end))
      out.push_back("TextMismatch(" + field + ")");
  };
  switch (task) {
    case TaskKind::Easqe:
      for (const Quadruple& q : r.quads)
        for (const Violation& v : validate_quadruple(q, s))
          out.push_back(to_string(v));
      break;
    case TaskKind::Aste:
      for (const Triple& t : r.triples) {
        check_span(t.target, "target");
        check_span(t.opinion, "opinion");
      }
      break;
    case TaskKind::Ope:
      for (const Pair& p : r.pairs) {
        check_span(p.target, "target");
        check_span(p.opinion, "opinion");
      }
      break;
  }
  return out;
}

inline Dataset read_dataset(const std::string& path, TaskKind task,
                            std::size_t max_raw_tokens = kMaxRawTokens,
                            std::ostream* warnings = &std::cerr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  Dataset d;
  d.name = path;
  d.task = task;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(line_no, "invalid JSON");
    Record r = record_from_json(j, task, line_no);
    std::vector<std::string> violations =
        record_violations(r, task, max_raw_tokens);
    if (!seen_ids.insert(r.sentence.id).second)
      violations.push_back("duplicate sentence id '" + r.sentence.id + "'");
    if (!violations.empty()) {
      std::string summary;
      for (const auto& v : violations)
        summary += (summary.empty() ? "" : "; ") + v;
      throw ValidationError(line_no, summary, violations);
    }
    std::size_t dropped = 0;
    r.quads = detail::dedupe_preserving_order(r.quads, &dropped);
    r.triples = detail::dedupe_preserving_order(r.triples, &dropped);
    r.pairs = detail::dedupe_preserving_order(r.pairs, &dropped);
    if (dropped > 0 && warnings)
      *warnings << "warning: " << path << " line " << line_no << ": dropped "
                << dropped << " duplicate annotation(s)\n";
    d.records.push_back(std::move(r));
  }
  return d;
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const Record& r : d.records)
    out << detail::record_to_json(r, d.task).dump() << '\n';
  if (!out) throw IoError("failed writing dataset file: " + path);
}

// --- legacy triplet lines ----------------------------------------------------

namespace detail {

// Parses a python-style list of (index-list, index-list, 'POL') tuples.
struct LegacyCursor {
  const std::string& text;
  std::size_t pos = 0;
  std::size_t line_no;

  void skip_space() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
      ++pos;
  }
  bool accept(char c) {
    skip_space();
    if (pos < text.size() && text[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c))
      throw ParseError(line_no, std::string("expected '") + c + "' in triplet list");
  }
  std::vector<std::size_t> index_list() {
    expect('[');
    std::vector<std::size_t> out;
    skip_space();
    while (pos < text.size() && text[pos] != ']') {
      std::size_t value = 0;
      bool any = false;
      while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
        value = value * 10 + static_cast<std::size_t>(text[pos] - '0');
        ++pos;
        any = true;
      }
      if (!any) throw ParseError(line_no, "expected token index");
      out.push_back(value);
      if (!accept(',')) break;
      skip_space();
    }
    expect(']');
    return out;
  }
  std::string quoted() {
    skip_space();
    if (pos >= text.size() || (text[pos] != '\'' && text[pos] != '"'))
      throw ParseError(line_no, "expected quoted polarity");
    char quote = text[pos++];
    std::string out;
    while (pos < text.size() && text[pos] != quote) out.push_back(text[pos++]);
    expect(quote);
    return out;
  }
};

inline Span span_from_indices(const std::vector<std::size_t>& indices,
                              const Sentence& s, std::size_t line_no) {
  if (indices.empty()) throw ParseError(line_no, "empty index list");
  std::size_t lo = *std::min_element(indices.begin(), indices.end());
  std::size_t hi = *std::max_element(indices.begin(), indices.end());
  if (indices.size() != hi - lo + 1)
    throw ParseError(line_no, "non-contiguous index list");
  if (hi >= s.size()) throw ParseError(line_no, "token index out of range");
  return Span{lo, hi + 1, join_tokens(s.tokens, lo, hi + 1)};
}

inline Polarity legacy_polarity(std::string p, std::size_t line_no) {
  std::transform(p.begin(), p.end(), p.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  if (p == "POS" || p == "POSITIVE") return Polarity::Positive;
  if (p == "NEU" || p == "NEUTRAL") return Polarity::Neutral;
  if (p == "NEG" || p == "NEGATIVE") return Polarity::Negative;
  throw ParseError(line_no, "unknown polarity '" + p + "'");
}

}  // namespace detail

// Reads  sentence####[([a-idx],[o-idx],'POL'), ...]  lines (whitespace
// tokenization, 0-based contiguous index lists). Sentence ids are the
// 1-based line numbers.
inline Dataset read_legacy_aste(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  Dataset d;
  d.name = path;
  d.task = TaskKind::Aste;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t sep = line.find("####");
    if (sep == std::string::npos)
      throw ParseError(line_no, "missing '####' separator");
    Record r;
    r.sentence.id = std::to_string(line_no);
    std::istringstream words(line.substr(0, sep));
    std::string w;
    while (words >> w) r.sentence.tokens.push_back(w);
    if (r.sentence.tokens.empty())
      throw ParseError(line_no, "empty sentence before '####'");

    std::string triplets = line.substr(sep + 4);
    detail::LegacyCursor cur{triplets, 0, line_no};
    cur.expect('[');
    cur.skip_space();
    while (cur.pos < triplets.size() && triplets[cur.pos] != ']') {
      cur.expect('(');
      auto target_idx = cur.index_list();
      cur.expect(',');
      auto opinion_idx = cur.index_list();
      cur.expect(',');
      std::string pol = cur.quoted();
      cur.expect(')');
      r.triples.push_back(
          Triple{detail::span_from_indices(target_idx, r.sentence, line_no),
                 detail::span_from_indices(opinion_idx, r.sentence, line_no),
                 detail::legacy_polarity(pol, line_no)});
      if (!cur.accept(',')) break;
      cur.skip_space();
    }
    cur.expect(']');
    r.triples = detail::dedupe_preserving_order(r.triples, nullptr);
    d.records.push_back(std::move(r));
  }
  return d;
}

// --- task conversion ----------------------------------------------------------

inline Dataset convert_easqe_to_aste(const Dataset& d) {
  if (d.task != TaskKind::Easqe)
    throw TaskError("convert_easqe_to_aste needs an EASQE dataset");
  Dataset out;
  out.name = d.name;
  out.task = TaskKind::Aste;
  for (const Record& r : d.records) {
    Record nr;
    nr.sentence = r.sentence;
    for (const Quadruple& q : r.quads) {
      Triple t = project_to_triple(q);
      if (std::find(nr.triples.begin(), nr.triples.end(), t) == nr.triples.end())
        nr.triples.push_back(std::move(t));
    }
    out.records.push_back(std::move(nr));
  }
  return out;
}

inline Dataset convert_aste_to_ope(const Dataset& d) {
  if (d.task != TaskKind::Aste)
    throw TaskError("convert_aste_to_ope needs an ASTE dataset");
  Dataset out;
  out.name = d.name;
  out.task = TaskKind::Ope;
  for (const Record& r : d.records) {
    Record nr;
    nr.sentence = r.sentence;
    for (const Triple& t : r.triples) {
      Pair p = project_to_pair(t);
      if (std::find(nr.pairs.begin(), nr.pairs.end(), p) == nr.pairs.end())
        nr.pairs.push_back(std::move(p));
    }
    out.records.push_back(std::move(nr));
  }
  return out;
}

// --- statistics and diffing ---------------------------------------------------

inline StatsReport dataset_stats(const Dataset& d) {
  if (d.task != TaskKind::Easqe) throw TaskError("stats need an EASQE dataset");
  if (d.records.empty()) throw EmptyDatasetError("dataset has no sentences");
  StatsReport report;
  report.sentence_count = d.records.size();
  std::size_t co_sentences = 0;
  for (const Record& r : d.records) {
    report.quad_count += r.quads.size();
    bool co = std::any_of(r.quads.begin(), r.quads.end(), [](const Quadruple& q) {
      return q.entity.has_value() && q.aspect.has_value();
    });
    if (co) ++co_sentences;
  }
  report.co_occurrence_pct =
      round2(100.0 * static_cast<double>(co_sentences) /
             static_cast<double>(report.sentence_count));
  return report;
}

// Percentage of `new_set` annotations absent from `old_set`, matched by
// sentence id plus exact structural equality. An EASQE `new_set` compared
// against an ASTE `old_set` is first projected to triples.
inline double dataset_diff(const Dataset& new_set, const Dataset& old_set) {
  if (new_set.task != TaskKind::Easqe)
    throw TaskError("diff expects an EASQE dataset as 'new'");
  if (old_set.task != TaskKind::Easqe && old_set.task != TaskKind::Aste)
    throw TaskError("diff expects EASQE or ASTE as 'old'");

  bool shared = false;
  std::set<std::string> old_ids;
  for (const Record& r : old_set.records) old_ids.insert(r.sentence.id);
  for (const Record& r : new_set.records)
    if (old_ids.count(r.sentence.id)) {
      shared = true;
      break;
    }
  if (!shared) throw IdMismatchError("datasets share no sentence ids");

  std::size_t total = 0, unmatched = 0;
  if (old_set.task == TaskKind::Easqe) {
    std::map<std::string, const Record*> old_by_id;
    for (const Record& r : old_set.records) old_by_id[r.sentence.id] = &r;
    for (const Record& r : new_set.records) {
      auto it = old_by_id.find(r.sentence.id);
      for (const Quadruple& q : r.quads) {
        ++total;
        bool found = it != old_by_id.end() &&
                     std::find(it->second->quads.begin(), it->second->quads.end(),
                               q) != it->second->quads.end();
        if (!found) ++unmatched;
      }
    }
  } else {
    std::map<std::string, const Record*> old_by_id;
    for (const Record& r : old_set.records) old_by_id[r.sentence.id] = &r;
    Dataset projected = convert_easqe_to_aste(new_set);
    for (const Record& r : projected.records) {
      auto it = old_by_id.find(r.sentence.id);
      for (const Triple& t : r.triples) {
        ++total;
        bool found = it != old_by_id.end() &&
                     std::find(it->second->triples.begin(),
                               it->second->triples.end(),
                               t) != it->second->triples.end();
        if (!found) ++unmatched;
      }
    }
  }
  if (total == 0) return 0.0;
  return round2(100.0 * static_cast<double>(unmatched) /
                static_cast<double>(total));
}

}  // namespace easqe
