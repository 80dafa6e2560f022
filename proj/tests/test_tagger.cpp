#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "easqe/rng.hpp"
#include "easqe/tagger.hpp"
#include "easqe/train.hpp"
#include "support/oracles.hpp"

using namespace easqe;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo,
                     double hi) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

// External-backend model with random emission/transition parameters.
TaggerModel random_external_model(const TagScheme& scheme, LikelihoodMode mode,
                                  std::size_t hidden, Rng& rng) {
  TaggerModel m = make_tagger_model(scheme, mode, EncoderKind::External, hidden);
  m.emission_w = random_matrix(hidden, scheme.num_labels(), rng, -1.0, 1.0);
  for (double& v : m.emission_b) v = rng.uniform(-1.0, 1.0);
  m.transitions = random_matrix(scheme.num_labels() + 2, scheme.num_labels() + 2,
                                rng, -1.0, 1.0);
  return m;
}

// Built-in-backend model over a tiny vocabulary, random everywhere.
TaggerModel small_builtin_model(const TagScheme& scheme, LikelihoodMode mode,
                                Rng& rng) {
  Vocabulary vocab;
  for (const char* w : {"the", "sushi", "price", "was", "fine", "bad"})
    vocab.add(w);
  TaggerModel m = make_tagger_model(scheme, mode, EncoderKind::Builtin, 6);
  m.encoder = init_encoder_params(vocab, 4, 6, rng);
  m.emission_w = random_matrix(6, scheme.num_labels(), rng, -0.5, 0.5);
  for (double& v : m.emission_b) v = rng.uniform(-0.5, 0.5);
  m.transitions = random_matrix(scheme.num_labels() + 2, scheme.num_labels() + 2,
                                rng, -0.5, 0.5);
  return m;
}

TrainInstance builtin_instance(const TagScheme& scheme, bool with_trigger) {
  Sentence s{"i1", {"the", "sushi", "price", "was", "fine"}};
  TrainInstance inst;
  inst.sentence = s;
  if (with_trigger) {
    inst.trigger = make_span(s, 4, 5);
    inst.gold = tags_from_spans({{make_span(s, 1, 2), 0},
                                 {make_span(s, 2, 3), scheme.num_categories() - 1}},
                                s.size(), scheme);
  } else {
    inst.gold =
        tags_from_spans({{make_span(s, 3, 5), 0}}, s.size(), scheme);
  }
  return inst;
}

std::vector<std::uint8_t> all_allowed(std::size_t labels) {
  return std::vector<std::uint8_t>((labels + 2) * (labels + 2), 1);
}

}  // namespace

// --- emission scores ---------------------------------------------------------

TEST_CASE("zero weights give zero emission scores") {
  TaggerModel m = make_tagger_model(TagScheme{SchemeKind::Stage1Easqe},
                                    LikelihoodMode::Crf, EncoderKind::External, 4);
  Matrix h(3, 4);
  Matrix scores = emission_scores(h, m);
  REQUIRE(scores.rows == 3);
  REQUIRE(scores.cols == 7);
  for (double v : scores.data) REQUIRE(v == 0.0);
}

TEST_CASE("emission scores match hand arithmetic") {
  TaggerModel m = make_tagger_model(TagScheme{SchemeKind::Stage1Span},
                                    LikelihoodMode::Crf, EncoderKind::External, 1);
  // d = 1, two active labels checked: W rows [1, 2], b = 0, h = [3]
  m.emission_w(0, 0) = 1.0;
  m.emission_w(0, 1) = 2.0;
  Matrix h(1, 1);
  h(0, 0) = 3.0;
  Matrix scores = emission_scores(h, m);
  CHECK(scores(0, 0) == 3.0);
  CHECK(scores(0, 1) == 6.0);
}

TEST_CASE("emission scores match the naive matrix-product oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    TaggerModel m = random_external_model(TagScheme{SchemeKind::Stage1Easqe},
                                          LikelihoodMode::Crf, 6, rng);
    Matrix h = random_matrix(5, 6, rng, -2.0, 2.0);
    Matrix fast = emission_scores(h, m);
    Matrix slow = oracles::naive_matmul_scores(h, m.emission_w, m.emission_b);
    for (std::size_t i = 0; i < fast.data.size(); ++i)
      REQUIRE(fast.data[i] == Catch::Approx(slow.data[i]).margin(1e-12));
  }
}

TEST_CASE("emission scores reject mismatched hidden width") {
  TaggerModel m = make_tagger_model(TagScheme{SchemeKind::Stage1Easqe},
                                    LikelihoodMode::Crf, EncoderKind::External, 4);
  Matrix h(3, 5);
  REQUIRE_THROWS_AS(emission_scores(h, m), DimensionMismatchError);
}

// --- log partition -----------------------------------------------------------

TEST_CASE("log partition of the trivial unmasked lattices") {
  // 1 token, 2 labels, everything zero and unmasked -> ln 2
  Matrix e1(1, 2);
  Matrix t(4, 4);
  auto allowed = all_allowed(2);
  crf::Lattice lat1{e1, t, allowed, true};
  REQUIRE(crf::log_partition(lat1) == Catch::Approx(std::log(2.0)).margin(1e-12));

  // 2 tokens -> four paths -> ln 4
  Matrix e2(2, 2);
  crf::Lattice lat2{e2, t, allowed, true};
  REQUIRE(crf::log_partition(lat2) == Catch::Approx(std::log(4.0)).margin(1e-12));
}

TEST_CASE("log partition matches exhaustive enumeration") {
  Rng rng(555);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  for (int trial = 0; trial < 50; ++trial) {
    TaggerModel m = random_external_model(scheme, LikelihoodMode::Crf, 3, rng);
    std::size_t n = 1 + rng.index(4);
    Matrix raw = random_matrix(n, 7, rng, -2.0, 2.0);
    double fast = log_partition(raw, m);
    double slow = oracles::brute_force_log_partition(m.lattice(raw));
    REQUIRE(fast == Catch::Approx(slow).margin(1e-9));
  }
}

TEST_CASE("log partition requires CRF mode") {
  TaggerModel m = make_tagger_model(TagScheme{SchemeKind::Stage1Span},
                                    LikelihoodMode::Softmax,
                                    EncoderKind::External, 2);
  Matrix raw(2, 3);
  REQUIRE_THROWS_AS(log_partition(raw, m), ModeError);
}

// --- log likelihood ----------------------------------------------------------

TEST_CASE("the unique allowed path has log likelihood zero") {
  TagScheme scheme{SchemeKind::Stage1Span};
  TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Crf,
                                    EncoderKind::External, 2);
  // Extreme mask: START->B, B->I, I->STOP only.
  std::fill(m.allowed.begin(), m.allowed.end(), 0);
  std::size_t side = 5, start = 3, stop = 4;
  m.allowed[start * side + 1] = 1;
  m.allowed[1 * side + 2] = 1;
  m.allowed[2 * side + stop] = 1;
  Rng rng(9);
  Matrix raw = random_matrix(2, 3, rng, -3.0, 3.0);
  TagSequence gold{scheme, {1, 2}};
  REQUIRE(log_likelihood(raw, gold, m) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("softmax log likelihood with uniform scores is -ln(num labels)") {
  // the per-token reading: 1 token, 2 labels, scores [0,0] -> ln(1/2)
  Matrix scores(1, 2);
  REQUIRE(detail::softmax_log_likelihood(scores, {0}) ==
          Catch::Approx(std::log(0.5)).margin(1e-12));

  TagScheme scheme{SchemeKind::Stage1Span};
  TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Softmax,
                                    EncoderKind::External, 2);
  Matrix raw(1, 3);
  REQUIRE(log_likelihood(raw, TagSequence{scheme, {0}}, m) ==
          Catch::Approx(std::log(1.0 / 3.0)).margin(1e-12));
}

TEST_CASE("CRF log likelihood matches the enumeration oracle") {
  Rng rng(321);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  for (int trial = 0; trial < 50; ++trial) {
    TaggerModel m = random_external_model(scheme, LikelihoodMode::Crf, 3, rng);
    std::size_t n = 1 + rng.index(4);
    Matrix raw = random_matrix(n, 7, rng, -2.0, 2.0);
    crf::Lattice lat = m.lattice(raw);
    TagSequence gold{scheme, oracles::random_valid_path(lat, rng)};
    double ll = log_likelihood(raw, gold, m);
    double slow = crf::path_score(lat, gold.labels) -
                  oracles::brute_force_log_partition(lat);
    REQUIRE(ll == Catch::Approx(slow).margin(1e-9));
    REQUIRE(ll <= 1e-12);  // exp(ll) in (0, 1]
  }
}

TEST_CASE("log likelihood rejects invalid gold") {
  TagScheme scheme{SchemeKind::Stage1Easqe};
  TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Crf,
                                    EncoderKind::External, 2);
  Matrix raw(2, 7);
  REQUIRE_THROWS_AS(log_likelihood(raw, TagSequence{scheme, {2, 0}}, m),
                    InvalidBioError);
}

TEST_CASE("path probabilities sum to one over the masked path set") {
  Rng rng(77);
  TagScheme scheme{SchemeKind::Stage2Easqe};
  for (int trial = 0; trial < 20; ++trial) {
    TaggerModel m = random_external_model(scheme, LikelihoodMode::Crf, 3, rng);
    std::size_t n = 1 + rng.index(5);
    Matrix raw = random_matrix(n, 5, rng, -1.5, 1.5);
    crf::Lattice lat = m.lattice(raw);
    double log_z = log_partition(raw, m);
    oracles::PathSet all = oracles::enumerate_paths(lat);
    double total = 0.0;
    for (double s : all.scores) total += std::exp(s - log_z);
    REQUIRE(total == Catch::Approx(1.0).margin(1e-9));
    // the normalizer dominates every single path, viterbi's included
    for (double s : all.scores) REQUIRE(log_z >= s - 1e-12);
  }
}

// --- viterbi -------------------------------------------------------------------

TEST_CASE("viterbi picks the per-position argmax when transitions are zero") {
  TagScheme scheme{SchemeKind::Stage1Span};
  TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Crf,
                                    EncoderKind::External, 2);
  Matrix raw(2, 3);
  raw(0, 0) = 1.0;  // emissions [[1,0],[0,1]] over labels O and B
  raw(1, 1) = 1.0;
  TagSequence tags = viterbi(raw, m);
  REQUIRE(tags.labels == std::vector<int>{0, 1});
}

TEST_CASE("all-zero scores decode to all O by the tie rule") {
  TagScheme scheme{SchemeKind::Stage1Easqe};
  TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Crf,
                                    EncoderKind::External, 2);
  Matrix raw(5, 7);
  TagSequence tags = viterbi(raw, m);
  REQUIRE(tags.labels == std::vector<int>(5, 0));
}

TEST_CASE("viterbi matches the enumeration argmax, ties included") {
  Rng rng(2024);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  for (int trial = 0; trial < 60; ++trial) {
    TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Crf,
                                      EncoderKind::External, 3);
    std::size_t n = 1 + rng.index(5);
    Matrix raw(n, 7);
    // quantized dyadic scores force plenty of exact ties
    for (double& v : raw.data)
      v = 0.25 * static_cast<double>(static_cast<int>(rng.index(5)) - 2);
    for (double& v : m.transitions.data)
      v = 0.25 * static_cast<double>(static_cast<int>(rng.index(3)) - 1);
    TagSequence tags = viterbi(raw, m);
    REQUIRE(tags.labels == oracles::brute_force_best_path(m.lattice(raw)));
    REQUIRE(tags.bio_valid());
  }
}

TEST_CASE("softmax-mode viterbi keeps the mask but drops transition values") {
  TagScheme scheme{SchemeKind::Stage1Span};
  TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Softmax,
                                    EncoderKind::External, 2);
  // transitions would forbid B if they were used
  m.transitions(3, 1) = -100.0;
  Matrix raw(2, 3);
  raw(0, 1) = 5.0;
  raw(1, 2) = 5.0;
  REQUIRE(viterbi(raw, m).labels == std::vector<int>{1, 2});
  // but an I at position 0 stays impossible whatever the scores say
  Matrix raw2(1, 3);
  raw2(0, 2) = 100.0;
  REQUIRE(viterbi(raw2, m).labels == std::vector<int>{0});
}

// --- gradients -------------------------------------------------------------------

TEST_CASE("transition gradient is zero in softmax mode") {
  Rng rng(5);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  TaggerModel m = small_builtin_model(scheme, LikelihoodMode::Softmax, rng);
  Gradients g = gradients({builtin_instance(scheme, false)}, m);
  for (double v : g.transitions.data) REQUIRE(v == 0.0);
}

TEST_CASE("bias gradient at zero parameters is uniform minus gold counts") {
  TagScheme scheme{SchemeKind::Stage1Span};
  TaggerModel m = make_tagger_model(scheme, LikelihoodMode::Softmax,
                                    EncoderKind::Builtin, 3);
  Vocabulary vocab;
  for (const char* w : {"a", "b", "c", "d"}) vocab.add(w);
  Rng rng(1);
  m.encoder = init_encoder_params(vocab, 2, 3, rng);
  for (double& v : m.encoder.embeddings.data) v = 0.0;
  for (double& v : m.encoder.segment_embeddings.data) v = 0.0;
  for (double& v : m.encoder.proj_w.data) v = 0.0;

  Sentence s{"z", {"a", "b", "c", "d"}};
  TrainInstance inst{s, std::nullopt,
                     tags_from_spans({{make_span(s, 1, 3), 0}}, 4, scheme)};
  // gold labels: O B I O -> counts {O:2, B:1, I:1}; uniform expectation 4/3
  Gradients g = gradients({inst}, m);
  REQUIRE(g.emission_b[0] == Catch::Approx(4.0 / 3.0 - 2.0).margin(1e-12));
  REQUIRE(g.emission_b[1] == Catch::Approx(4.0 / 3.0 - 1.0).margin(1e-12));
  REQUIRE(g.emission_b[2] == Catch::Approx(4.0 / 3.0 - 1.0).margin(1e-12));
}

TEST_CASE("analytic gradients match central differences in every mode") {
  Rng rng(42);
  for (LikelihoodMode mode : {LikelihoodMode::Crf, LikelihoodMode::Softmax}) {
    for (bool stage2 : {false, true}) {
      TagScheme scheme{stage2 ? SchemeKind::Stage2Easqe : SchemeKind::Stage1Easqe};
      TaggerModel m = small_builtin_model(scheme, mode, rng);
      TrainInstance inst = builtin_instance(scheme, stage2);
      double err = gradient_check(m, inst, 1e-5);
      INFO("mode " << to_string(mode) << " stage2 " << stage2);
      REQUIRE(err < 1e-4);
    }
  }
}

TEST_CASE("gradient check works for the external backend too") {
  Rng rng(43);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  TaggerModel m = random_external_model(scheme, LikelihoodMode::Crf, 4, rng);
  Sentence s{"e1", {"x", "y", "z"}};
  TrainInstance inst{s, std::nullopt,
                     tags_from_spans({{make_span(s, 0, 2), 2}}, 3, scheme)};
  ExternalEmbeddingStore store;
  store.records["e1/s1"] = random_matrix(5, 4, rng, -1.0, 1.0);
  REQUIRE(gradient_check(m, inst, 1e-5, &store) < 1e-4);
}

TEST_CASE("a unit perturbation on one coordinate is detected") {
  Rng rng(7);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  TaggerModel m = small_builtin_model(scheme, LikelihoodMode::Crf, rng);
  TrainInstance inst = builtin_instance(scheme, false);
  std::vector<double> analytic = flat_analytic_gradient(m, inst);
  std::vector<double> numeric = flat_numeric_gradient(m, inst, 1e-5);
  REQUIRE(max_rel_error(analytic, numeric) < 1e-4);
  analytic[0] += 1.0;
  double denom = std::max({1.0, std::fabs(analytic[0]), std::fabs(numeric[0])});
  REQUIRE(std::fabs(analytic[0] - numeric[0]) / denom >= 0.5);
  REQUIRE(max_rel_error(analytic, numeric) >= 0.5);
}

TEST_CASE("batch gradient equals the mean of singleton gradients") {
  Rng rng(8);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  TaggerModel m = small_builtin_model(scheme, LikelihoodMode::Crf, rng);
  Sentence s1{"b1", {"the", "sushi", "was", "fine"}};
  Sentence s2{"b2", {"the", "price", "was", "bad", "bad"}};
  std::vector<TrainInstance> batch{
      {s1, std::nullopt, tags_from_spans({{make_span(s1, 3, 4), 0}}, 4, scheme)},
      {s2, std::nullopt, tags_from_spans({{make_span(s2, 3, 5), 2}}, 5, scheme)},
  };
  Gradients whole = gradients(batch, m);
  Gradients first = gradients({batch[0]}, m);
  Gradients second = gradients({batch[1]}, m);
  auto wv = gradient_view(whole, m);
  auto fv = gradient_view(first, m);
  auto sv = gradient_view(second, m);
  for (std::size_t i = 0; i < wv.size(); ++i)
    REQUIRE(*wv[i] == Catch::Approx(0.5 * (*fv[i] + *sv[i])).margin(1e-12));
}

TEST_CASE("loss is non-increasing under small steps on a fixed batch") {
  Rng rng(9);
  TagScheme scheme{SchemeKind::Stage1Easqe};
  TaggerModel m = small_builtin_model(scheme, LikelihoodMode::Crf, rng);
  std::vector<TrainInstance> batch{builtin_instance(scheme, false)};
  AdamState adam(parameter_view(m).size());
  double previous = gradients(batch, m).mean_nll;
  for (int step = 0; step < 10; ++step) {
    Gradients g = gradients(batch, m);
    auto params = parameter_view(m);
    adam_step(params, gradient_view(g, m), adam, 1e-4);
    double now = gradients(batch, m).mean_nll;
    REQUIRE(now <= previous + 1e-10);
    previous = now;
  }
}

// --- serialization -----------------------------------------------------------------

TEST_CASE("model JSON round-trips and serializes deterministically") {
  Rng rng(12);
  TagScheme scheme{SchemeKind::Stage2Easqe};
  TaggerModel m = small_builtin_model(scheme, LikelihoodMode::Crf, rng);

  auto dir = std::filesystem::temp_directory_path() / "easqe_tests";
  std::filesystem::create_directories(dir);
  std::string p1 = (dir / "model_a.json").string();
  std::string p2 = (dir / "model_b.json").string();
  save_model(m, p1);
  save_model(m, p2);

  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  REQUIRE(slurp(p1) == slurp(p2));
  REQUIRE(slurp(p1).find("easqe-model-v1") != std::string::npos);

  TaggerModel loaded = load_model(p1);
  CHECK(loaded.scheme == m.scheme);
  CHECK(loaded.mode == m.mode);
  CHECK(loaded.encoder_kind == m.encoder_kind);
  CHECK(loaded.emission_w == m.emission_w);
  CHECK(loaded.emission_b == m.emission_b);
  CHECK(loaded.transitions == m.transitions);
  CHECK(loaded.allowed == m.allowed);
  CHECK(loaded.encoder.vocab.tokens == m.encoder.vocab.tokens);
  CHECK(loaded.encoder.embeddings == m.encoder.embeddings);
  CHECK(loaded.encoder.proj_w == m.encoder.proj_w);
}

TEST_CASE("model loader rejects foreign documents") {
  auto dir = std::filesystem::temp_directory_path() / "easqe_tests";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "not_a_model.json").string();
  {
    std::ofstream out(path);
    out << "{\"format\": \"something-else\"}\n";
  }
  REQUIRE_THROWS_AS(load_model(path), FormatError);
}
