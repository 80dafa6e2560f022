// Acceptance suite. Each test case checks one criterion end to end and
// prints a single pass/fail line; details follow on failure.
#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "easqe/cli.hpp"
#include "easqe/eval.hpp"
#include "easqe/pipeline.hpp"
#include "easqe/train.hpp"
#include "support/oracles.hpp"
#include "support/template_corpus.hpp"

using namespace easqe;

namespace {

struct Criterion {
  std::string name;
  bool ok = true;
  std::vector<std::string> notes;

  explicit Criterion(std::string n) : name(std::move(n)) {}

  void expect(bool condition, const std::string& message) {
    if (!condition) {
      ok = false;
      if (notes.size() < 12) notes.push_back(message);
    }
  }

  void finish(const std::string& extra = "") {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name;
    if (!extra.empty()) std::cout << " (" << extra << ")";
    std::cout << std::endl;
    for (const std::string& note : notes)
      std::cout << "       - " << note << std::endl;
  }
};

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo,
                     double hi) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

// dyadic grid values add exactly in binary floating point, so exact ties
// survive both dynamic programming and brute-force summation orders
double quantized(Rng& rng, double step, int levels) {
  return step * static_cast<double>(static_cast<int>(rng.index(levels)) -
                                    levels / 2);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path accept_dir() {
  auto dir = std::filesystem::temp_directory_path() / "easqe_acceptance";
  std::filesystem::create_directories(dir);
  return dir;
}

struct QuietStdout {
  std::ostringstream sink;
  std::streambuf* saved;
  QuietStdout() : saved(std::cout.rdbuf(sink.rdbuf())) {}
  ~QuietStdout() { std::cout.rdbuf(saved); }
};

}  // namespace

TEST_CASE("criterion 1: CRF correctness by enumeration") {
  Criterion c("criterion 1: log partition, likelihood, and viterbi match "
              "exhaustive enumeration on 1000 instances");
  Rng rng(10001);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  for (int trial = 0; trial < 1000; ++trial) {
    TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Crf,
                                      EncoderKind::External, 3);
    std::size_t n = 1 + rng.index(6);
    Matrix raw(n, 7);
    bool tie_heavy = trial % 3 == 0;
    for (double& v : raw.data)
      v = tie_heavy ? quantized(rng, 0.25, 5) : rng.uniform(-2.0, 2.0);
    for (double& v : m.transitions.data)
      v = tie_heavy ? quantized(rng, 0.25, 3) : rng.uniform(-1.0, 1.0);

    crf::Lattice lat = m.lattice(raw);
    double fast_z = log_partition(raw, m);
    double slow_z = oracles::brute_force_log_partition(lat);
    c.expect(std::fabs(fast_z - slow_z) < 1e-9,
             "log_partition off at trial " + std::to_string(trial));

    TagSequence gold{scheme, oracles::random_valid_path(lat, rng)};
    double ll = log_likelihood(raw, gold, m);
    double slow_ll = crf::path_score(lat, gold.labels) - slow_z;
    c.expect(std::fabs(ll - slow_ll) < 1e-9,
             "log_likelihood off at trial " + std::to_string(trial));

    c.expect(viterbi(raw, m).labels == oracles::brute_force_best_path(lat),
             "viterbi argmax mismatch at trial " + std::to_string(trial));
  }
  c.finish();
  REQUIRE(c.ok);
}

TEST_CASE("criterion 2: gradient fidelity") {
  Criterion c("criterion 2: analytic gradients within 1e-4 of central "
              "differences over 20 seeds; unit fault detected");
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (Stage stage : {Stage::One, Stage::Two}) {
      for (LikelihoodMode mode : {LikelihoodMode::Crf, LikelihoodMode::Softmax}) {
        auto fixture = cli::make_gradcheck_fixture(seed, stage, mode);
        double err = gradient_check(fixture.model, fixture.instance, 1e-5);
        worst = std::max(worst, err);
        c.expect(err < 1e-4, "seed " + std::to_string(seed) + " stage " +
                                 (stage == Stage::One ? "1" : "2") + " mode " +
                                 to_string(mode) + ": error " +
                                 std::to_string(err));
      }
    }
  }
  // injected fault: a unit offset on one coordinate must be flagged
  auto fixture = cli::make_gradcheck_fixture(3, Stage::One, LikelihoodMode::Crf);
  std::vector<double> analytic =
      flat_analytic_gradient(fixture.model, fixture.instance);
  std::vector<double> numeric =
      flat_numeric_gradient(fixture.model, fixture.instance, 1e-5);
  analytic[0] += 1.0;
  c.expect(max_rel_error(analytic, numeric) >= 0.5,
           "unit perturbation went undetected");
  std::ostringstream extra;
  extra << "max error " << worst;
  c.finish(extra.str());
  REQUIRE(c.ok);
}

TEST_CASE("criterion 3: BIO safety under fuzzing") {
  Criterion c("criterion 3: constrained viterbi is BIO-valid on 100000 random "
              "emission matrices; span round trips hold");
  Rng rng(30303);
  const SchemeKind kinds[] = {SchemeKind::Stage1Easqe, SchemeKind::Stage1Span,
                              SchemeKind::Stage2Easqe, SchemeKind::Stage2Aspect};
  for (int trial = 0; trial < 100000; ++trial) {
    TagScheme scheme{kinds[trial % 4]};
    TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Crf,
                                      EncoderKind::External, 2);
    std::size_t n = 1 + rng.index(8);
    Matrix raw(n, scheme.num_labels());
    for (double& v : raw.data)
      v = trial % 4 == 0 ? quantized(rng, 0.5, 5) : rng.uniform(-3.0, 3.0);
    for (double& v : m.transitions.data) v = rng.uniform(-1.0, 1.0);
    TagSequence tags = viterbi(raw, m);
    if (!tags.bio_valid()) {
      c.expect(false, "invalid BIO at trial " + std::to_string(trial));
      break;
    }
    if (trial % 100 == 0) {
      std::vector<std::string> tokens(n, "w");
      try {
        auto spans = spans_from_tags(tags, tokens);
        TagSequence back = tags_from_spans(spans, n, scheme);
        c.expect(back == tags, "round trip broke at trial " + std::to_string(trial));
      } catch (const Error& e) {
        c.expect(false, std::string("span decode threw: ") + e.what());
      }
    }
  }
  // property-based round trips over random valid sequences
  for (int trial = 0; trial < 2000; ++trial) {
    TagScheme scheme{kinds[trial % 4]};
    std::size_t n = 1 + rng.index(10);
    TagSequence tags{scheme, {}};
    int prev = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> options{0};
      for (int cat = 0; cat < scheme.num_categories(); ++cat)
        options.push_back(scheme.begin_label(cat));
      if (i > 0 && prev != 0)
        options.push_back(scheme.inside_label(TagScheme::category_of(prev)));
      prev = options[rng.index(options.size())];
      tags.labels.push_back(prev);
    }
    std::vector<std::string> tokens(n, "w");
    auto spans = spans_from_tags(tags, tokens);
    for (std::size_t i = 1; i < spans.size(); ++i)
      c.expect(spans[i - 1].span.end <= spans[i].span.start,
               "overlapping spans from tags");
    c.expect(tags_from_spans(spans, n, scheme) == tags,
             "tags -> spans -> tags road trip failed");
  }
  c.finish();
  REQUIRE(c.ok);
}

TEST_CASE("criterion 4: quadruplet decoding fidelity") {
  Criterion c("criterion 4: quadruplet decoding reproduces the golden branch "
              "table and the reference examples");
  Sentence s{"g", {"t0", "t1", "t2", "t3", "t4", "t5", "t6", "o"}};
  Span opinion = make_span(s, 7, 8);
  auto span_at = [&](std::size_t i) { return make_span(s, i, i + 1); };

  for (std::size_t q = 0; q <= 3; ++q) {
    for (std::size_t k = 0; k <= 3; ++k) {
      TargetSet t;
      for (std::size_t i = 0; i < q; ++i) t.entities.push_back(span_at(i));
      for (std::size_t i = 0; i < k; ++i) t.aspects.push_back(span_at(3 + i));
      auto quads = decode_quadruples(
          s, {OpinionHit{opinion, Polarity::Positive}}, {t});
      std::size_t expected =
          (q == 0 && k == 0) ? 0 : (q * k == 1 ? 1 : (k >= 1 ? k : q));
      c.expect(quads.size() == expected,
               "branch (q=" + std::to_string(q) + ", k=" + std::to_string(k) +
                   ") emitted " + std::to_string(quads.size()));
      if (q * k == 1)
        c.expect(quads[0].entity == t.entities[0] && quads[0].aspect == t.aspects[0],
                 "unique pairing did not keep (e0, a0)");
      else if (k >= 1)
        for (const Quadruple& quad : quads)
          c.expect(!quad.entity && quad.aspect.has_value(),
                   "aspect branch kept an entity");
      else if (q >= 1)
        for (const Quadruple& quad : quads)
          c.expect(quad.entity.has_value() && !quad.aspect,
                   "entity branch kept an aspect");
    }
  }

  {  // (sushi, price, reasonable, POS) and (sushi, null, well made, POS)
    Sentence sushi{"p1", {"the", "sushi", "price", "was", "reasonable", "and",
                          "it", "was", "well", "made"}};
    auto quads1 = decode_quadruples(
        sushi, {OpinionHit{make_span(sushi, 4, 5), Polarity::Positive}},
        {TargetSet{{make_span(sushi, 1, 2)}, {make_span(sushi, 2, 3)}}});
    c.expect(quads1.size() == 1 &&
                 quads1[0] == Quadruple{make_span(sushi, 1, 2),
                                        make_span(sushi, 2, 3),
                                        make_span(sushi, 4, 5),
                                        Polarity::Positive},
             "sushi-price quadruplet wrong");
    auto quads2 = decode_quadruples(
        sushi, {OpinionHit{make_span(sushi, 8, 10), Polarity::Positive}},
        {TargetSet{{make_span(sushi, 1, 2)}, {}}});
    c.expect(quads2.size() == 1 &&
                 quads2[0] == Quadruple{make_span(sushi, 1, 2), std::nullopt,
                                        make_span(sushi, 8, 10),
                                        Polarity::Positive},
             "sushi-well-made quadruplet wrong");
  }
  {  // (staff, service, impeccable, NEG)
    Sentence staff{"p2", {"the", "staff", "offers", "impeccable", "service"}};
    auto quads = decode_quadruples(
        staff, {OpinionHit{make_span(staff, 3, 4), Polarity::Negative}},
        {TargetSet{{make_span(staff, 1, 2)}, {make_span(staff, 4, 5)}}});
    c.expect(quads.size() == 1 && quads[0].entity == make_span(staff, 1, 2) &&
                 quads[0].aspect == make_span(staff, 4, 5),
             "staff-service row wrong");
  }
  {  // (restaurant, null, cramped, NEG)
    Sentence rest{"p3", {"prices", "too", "high", "for", "this", "cramped",
                         "and", "unappealing", "restaurant"}};
    auto quads = decode_quadruples(
        rest, {OpinionHit{make_span(rest, 5, 6), Polarity::Negative}},
        {TargetSet{{make_span(rest, 8, 9)}, {}}});
    c.expect(quads.size() == 1 &&
                 quads[0] == Quadruple{make_span(rest, 8, 9), std::nullopt,
                                       make_span(rest, 5, 6), Polarity::Negative},
             "cramped-restaurant row wrong");
  }
  {  // (null, service, could have been better, NEG)
    Sentence cafe{"p4", {"but", "the", "service", "could", "have", "been",
                         "better"}};
    auto quads = decode_quadruples(
        cafe, {OpinionHit{make_span(cafe, 3, 7), Polarity::Negative}},
        {TargetSet{{}, {make_span(cafe, 2, 3)}}});
    c.expect(quads.size() == 1 &&
                 quads[0] == Quadruple{std::nullopt, make_span(cafe, 2, 3),
                                       make_span(cafe, 3, 7), Polarity::Negative},
             "cafe-service row wrong");
  }

  // fuzz: never both-null, never duplicated
  Rng rng(40404);
  for (int trial = 0; trial < 5000; ++trial) {
    std::size_t n_hits = 1 + rng.index(3);
    std::vector<OpinionHit> hits;
    std::vector<TargetSet> targets;
    for (std::size_t i = 0; i < n_hits; ++i) {
      std::size_t at = rng.index(7);
      hits.push_back(OpinionHit{span_at(at), static_cast<Polarity>(rng.index(3))});
      TargetSet t;
      std::set<std::size_t> used;
      for (std::size_t e = rng.index(4); e-- > 0;) {
        std::size_t at2 = rng.index(7);
        if (used.insert(at2).second) t.entities.push_back(span_at(at2));
      }
      for (std::size_t a = rng.index(4); a-- > 0;) {
        std::size_t at2 = rng.index(7);
        if (used.insert(at2).second) t.aspects.push_back(span_at(at2));
      }
      targets.push_back(std::move(t));
    }
    auto quads = decode_quadruples(s, hits, targets);
    std::set<Quadruple> unique(quads.begin(), quads.end());
    c.expect(unique.size() == quads.size(), "duplicate quadruple under fuzz");
    for (const Quadruple& quad : quads)
      c.expect(quad.entity.has_value() || quad.aspect.has_value(),
               "both-null quadruple under fuzz");
  }
  c.finish();
  REQUIRE(c.ok);
}

TEST_CASE("criterion 5: end-to-end learnability on the template corpus") {
  Criterion c("criterion 5: built-in pipeline reaches exact-match F1 >= 0.95 "
              "on EASQE, ASTE, and OPE within 30 epochs");
  auto started = std::chrono::steady_clock::now();

  corpus::CorpusBundle bundle = corpus::make_template_corpus(2026);
  TrainConfig config;
  config.max_epochs = 30;
  config.patience = 5;
  config.embedding_dim = 16;
  config.hidden_dim = 32;
  config.seed = 11;

  std::set<SchemeKind> schemes_seen;
  std::ostringstream extra;

  auto run_task = [&](TaskKind task, const Dataset& train_set,
                      const Dataset& dev_set, const Dataset& test_set,
                      const char* row) {
    TaggerModel m1 = train(train_set, dev_set, Stage::One, task, config);
    TaggerModel m2 = train(train_set, dev_set, Stage::Two, task, config);
    schemes_seen.insert(m1.scheme.kind);
    schemes_seen.insert(m2.scheme.kind);
    EvalReport report = evaluate(m1, m2, test_set, task);
    const PrfRow* found = report.find(row);
    double f1 = found ? found->f1() : 0.0;
    extra << to_string(task) << " " << row << " F1 " << f1 << "; ";
    c.expect(f1 >= 0.95, std::string(to_string(task)) + " " + row + " F1 " +
                             std::to_string(f1) + " below 0.95");
  };

  run_task(TaskKind::Easqe, bundle.train, bundle.dev, bundle.test, "quad");

  Dataset aste_train = convert_easqe_to_aste(bundle.train);
  Dataset aste_dev = convert_easqe_to_aste(bundle.dev);
  Dataset aste_test = convert_easqe_to_aste(bundle.test);
  run_task(TaskKind::Aste, aste_train, aste_dev, aste_test, "triple");

  Dataset ope_train = convert_aste_to_ope(aste_train);
  Dataset ope_dev = convert_aste_to_ope(aste_dev);
  Dataset ope_test = convert_aste_to_ope(aste_test);
  run_task(TaskKind::Ope, ope_train, ope_dev, ope_test, "pair");

  c.expect(schemes_seen.size() == 4, "not all four tag schemes were exercised");

  double seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - started)
                       .count();
  extra << seconds << "s";
  c.expect(seconds < 300.0, "runtime exceeded five minutes");
  c.finish(extra.str());
  REQUIRE(c.ok);
}

TEST_CASE("criterion 6: conversion and evaluation coherence") {
  Criterion c("criterion 6: projection properties, fixture scores, and "
              "evaluator symmetry hold");

  // projection properties over a generated corpus
  corpus::CorpusBundle bundle = corpus::make_template_corpus(606, 80, 10, 10);
  Dataset aste = convert_easqe_to_aste(bundle.train);
  Dataset ope = convert_aste_to_ope(aste);
  for (std::size_t i = 0; i < bundle.train.records.size(); ++i) {
    const Record& src = bundle.train.records[i];
    const Record& mid = aste.records[i];
    c.expect(mid.triples.size() <= src.quads.size(),
             "conversion grew the record");
    for (const Triple& t : mid.triples) {
      bool sourced = false;
      for (const Quadruple& q : src.quads)
        if ((q.entity && *q.entity == t.target) ||
            (q.aspect && *q.aspect == t.target))
          sourced = true;
      c.expect(sourced, "triple target not drawn from a source quad");
    }
    c.expect(ope.records[i].pairs.size() <= mid.triples.size(),
             "pair conversion grew the record");
  }

  // hand-computed fixtures
  using SpanSets = std::map<std::string, std::vector<Span>>;
  auto sp = [](std::size_t a) { return Span{a, a + 1, "t" + std::to_string(a)}; };
  SpanSets gold{{"s", {sp(0), sp(2)}}};
  SpanSets pred{{"s", {sp(0), sp(4)}}};
  Prf prf = exact_match_prf(gold, pred);
  c.expect(prf.precision == 0.5 && prf.recall == 0.5 && prf.f1 == 0.5,
           "fixture {A,B} vs {A,C} not (0.5, 0.5, 0.5)");
  Prf perfect = exact_match_prf(gold, gold);
  c.expect(perfect.precision == 1.0 && perfect.recall == 1.0 && perfect.f1 == 1.0,
           "identical sets not (1, 1, 1)");
  Prf nothing = exact_match_prf(gold, SpanSets{{"s", {}}});
  c.expect(nothing.precision == 0.0 && nothing.recall == 0.0 && nothing.f1 == 0.0,
           "empty prediction not (0, 0, 0)");

  // symmetry under fuzz
  Rng rng(60606);
  for (int trial = 0; trial < 500; ++trial) {
    SpanSets a, b;
    for (int s = 0; s < 3; ++s) {
      std::string id = "s" + std::to_string(s);
      for (std::size_t i = rng.index(4); i-- > 0;) a[id].push_back(sp(rng.index(8)));
      for (std::size_t i = rng.index(4); i-- > 0;) b[id].push_back(sp(rng.index(8)));
    }
    Prf forward = exact_match_prf(a, b);
    Prf backward = exact_match_prf(b, a);
    c.expect(std::fabs(forward.precision - backward.recall) < 1e-15 &&
                 std::fabs(forward.recall - backward.precision) < 1e-15,
             "P(g,p) != R(p,g) under fuzz");
  }
  c.finish();
  REQUIRE(c.ok);
}

TEST_CASE("criterion 7: released Res14 statistics (conditional)") {
  std::string path;
  if (const char* env = std::getenv("EASQE_RES14_TRAIN")) path = env;
  if (path.empty() && std::filesystem::exists("data/res14_easqe_train.jsonl"))
    path = "data/res14_easqe_train.jsonl";
  if (path.empty() || !std::filesystem::exists(path)) {
    std::cout << "[SKIP] criterion 7: Res14-EASQE training file not supplied "
                 "(set EASQE_RES14_TRAIN or place data/res14_easqe_train.jsonl)"
              << std::endl;
    SKIP("Res14-EASQE training file not supplied");
  }
  Criterion c("criterion 7: Res14-EASQE training statistics match the "
              "published counts");
  StatsReport report = dataset_stats(read_dataset(path, TaskKind::Easqe));
  c.expect(report.sentence_count == 1259,
           "sentences " + std::to_string(report.sentence_count) + " != 1259");
  c.expect(report.quad_count == 2526,
           "quads " + std::to_string(report.quad_count) + " != 2526");
  c.expect(std::fabs(report.co_occurrence_pct - 6.04) <= 0.01,
           "co-occurrence " + std::to_string(report.co_occurrence_pct) +
               " not within 0.01 of 6.04");
  c.finish();
  REQUIRE(c.ok);
}

TEST_CASE("criterion 8: determinism of model and prediction files") {
  Criterion c("criterion 8: identical seeds and inputs give byte-identical "
              "model and prediction files");
  auto dir = accept_dir();
  corpus::CorpusBundle bundle = corpus::make_template_corpus(808, 40, 10, 10);
  write_dataset(bundle.train, (dir / "train.jsonl").string());
  write_dataset(bundle.dev, (dir / "dev.jsonl").string());
  write_dataset(bundle.test, (dir / "test.jsonl").string());

  auto train_once = [&](const std::string& stage, const std::string& out) {
    QuietStdout quiet;
    return cli::run_cli({"train", "--train", (dir / "train.jsonl").string(),
                         "--dev", (dir / "dev.jsonl").string(), "--task",
                         "easqe", "--stage", stage, "--seed", "9", "--epochs",
                         "4", "--embedding-dim", "8", "--hidden-dim", "16",
                         "--model-out", (dir / out).string()});
  };
  c.expect(train_once("1", "m1_a.json") == 0, "stage-1 training failed");
  c.expect(train_once("1", "m1_b.json") == 0, "stage-1 retraining failed");
  c.expect(train_once("2", "m2_a.json") == 0, "stage-2 training failed");
  c.expect(train_once("2", "m2_b.json") == 0, "stage-2 retraining failed");
  c.expect(slurp((dir / "m1_a.json").string()) ==
               slurp((dir / "m1_b.json").string()),
           "stage-1 model files differ between identical runs");
  c.expect(slurp((dir / "m2_a.json").string()) ==
               slurp((dir / "m2_b.json").string()),
           "stage-2 model files differ between identical runs");

  auto predict_once = [&](const std::string& out) {
    QuietStdout quiet;
    return cli::run_cli({"predict", "--model1", (dir / "m1_a.json").string(),
                         "--model2", (dir / "m2_a.json").string(), "--data",
                         (dir / "test.jsonl").string(), "--task", "easqe",
                         "--out", (dir / out).string()});
  };
  c.expect(predict_once("pred_a.jsonl") == 0, "prediction failed");
  c.expect(predict_once("pred_b.jsonl") == 0, "re-prediction failed");
  c.expect(slurp((dir / "pred_a.jsonl").string()) ==
               slurp((dir / "pred_b.jsonl").string()),
           "prediction files differ between identical runs");
  c.finish();
  REQUIRE(c.ok);
}
