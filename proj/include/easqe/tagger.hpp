// Trainable sequence-labeling core: emission scores, per-token softmax and
// globally normalized CRF likelihoods, analytic gradients, and constrained
// Viterbi decoding.
//
// Transitions are parameterized over labels plus START/STOP rows; a boolean
// mask pins BIO-invalid moves to -inf so decoded output is always well
// formed regardless of the learned values.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "easqe/encoder.hpp"
#include "easqe/errors.hpp"
#include "easqe/framing.hpp"
#include "easqe/matrix.hpp"
#include "easqe/tags.hpp"

namespace easqe {

enum class LikelihoodMode { Softmax, Crf };
enum class EncoderKind { Builtin, External };

inline const char* to_string(LikelihoodMode m) {
  return m == LikelihoodMode::Crf ? "crf" : "softmax";
}

inline const char* to_string(EncoderKind k) {
  return k == EncoderKind::Builtin ? "builtin" : "external";
}

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Lattice math, shared by both likelihood modes. Labels are 0..L-1; the
// transition matrix and mask have two extra rows/columns for START (index L)
// and STOP (index L+1).
namespace crf {

inline double logsumexp(const std::vector<double>& xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  return m + std::log(sum);
}

struct Lattice {
  const Matrix& emissions;  // n x L, raw positions only
  const Matrix& transitions;
  const std::vector<std::uint8_t>& allowed;
  bool use_transition_values = true;  // false: masked zeros (softmax decoding)

  std::size_t length() const { return emissions.rows; }
  std::size_t num_labels() const { return emissions.cols; }
  std::size_t start() const { return num_labels(); }
  std::size_t stop() const { return num_labels() + 1; }

  double trans(std::size_t from, std::size_t to) const {
    std::size_t side = num_labels() + 2;
    if (!allowed[from * side + to]) return kNegInf;
    return use_transition_values ? transitions(from, to) : 0.0;
  }
};

inline Matrix forward_lattice(const Lattice& lat) {
  std::size_t n = lat.length(), L = lat.num_labels();
  Matrix alpha(n, L, kNegInf);
  for (std::size_t y = 0; y < L; ++y)
    alpha(0, y) = lat.trans(lat.start(), y) + lat.emissions(0, y);
  std::vector<double> acc(L);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < L; ++y) {
      for (std::size_t p = 0; p < L; ++p) acc[p] = alpha(t - 1, p) + lat.trans(p, y);
      alpha(t, y) = logsumexp(acc) + lat.emissions(t, y);
    }
  }
  return alpha;
}

inline Matrix backward_lattice(const Lattice& lat) {
  std::size_t n = lat.length(), L = lat.num_labels();
  Matrix beta(n, L, kNegInf);
  for (std::size_t y = 0; y < L; ++y) beta(n - 1, y) = lat.trans(y, lat.stop());
  std::vector<double> acc(L);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t y = 0; y < L; ++y) {
      for (std::size_t q = 0; q < L; ++q)
        acc[q] = lat.trans(y, q) + lat.emissions(t + 1, q) + beta(t + 1, q);
      beta(t, y) = logsumexp(acc);
    }
  }
  return beta;
}

inline double log_partition(const Lattice& lat) {
  Matrix alpha = forward_lattice(lat);
  std::size_t n = lat.length(), L = lat.num_labels();
  std::vector<double> finals(L);
  for (std::size_t y = 0; y < L; ++y)
    finals[y] = alpha(n - 1, y) + lat.trans(y, lat.stop());
  return logsumexp(finals);
}

inline double path_score(const Lattice& lat, const std::vector<int>& path) {
  double score = lat.trans(lat.start(), path[0]);
  for (std::size_t t = 0; t < path.size(); ++t) {
    score += lat.emissions(t, path[t]);
    if (t + 1 < path.size()) score += lat.trans(path[t], path[t + 1]);
  }
  score += lat.trans(path.back(), lat.stop());
  return score;
}

// Argmax path. Ties break toward the lower label index at every backpointer
// decision, which picks the path that is lexicographically smallest read
// from the last position backwards.
inline std::vector<int> viterbi_path(const Lattice& lat) {
  std::size_t n = lat.length(), L = lat.num_labels();
  Matrix best(n, L, kNegInf);
  std::vector<std::vector<int>> back(n, std::vector<int>(L, -1));
  for (std::size_t y = 0; y < L; ++y)
    best(0, y) = lat.trans(lat.start(), y) + lat.emissions(0, y);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < L; ++y) {
      double top = kNegInf;
      int arg = -1;
      for (std::size_t p = 0; p < L; ++p) {
        double cand = best(t - 1, p) + lat.trans(p, y);
        if (cand > top) {
          top = cand;
          arg = static_cast<int>(p);
        }
      }
      best(t, y) = top + lat.emissions(t, y);
      back[t][y] = arg;
    }
  }
  double top = kNegInf;
  int last = 0;
  for (std::size_t y = 0; y < L; ++y) {
    double cand = best(n - 1, y) + lat.trans(y, lat.stop());
    if (cand > top) {
      top = cand;
      last = static_cast<int>(y);
    }
  }
  std::vector<int> path(n);
  path[n - 1] = last;
  for (std::size_t t = n - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
  return path;
}

// Accumulates scale * d(-log p(gold)) into d_emissions (n x L) and
// d_transitions ((L+2) x (L+2)) using forward-backward marginals.
inline double nll_gradients(const Lattice& lat, const std::vector<int>& gold,
                            double scale, Matrix& d_emissions,
                            Matrix& d_transitions) {
  std::size_t n = lat.length(), L = lat.num_labels();
  Matrix alpha = forward_lattice(lat);
  Matrix beta = backward_lattice(lat);
  std::vector<double> finals(L);
  for (std::size_t y = 0; y < L; ++y)
    finals[y] = alpha(n - 1, y) + lat.trans(y, lat.stop());
  double log_z = logsumexp(finals);

  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t y = 0; y < L; ++y) {
      double marginal = std::exp(alpha(t, y) + beta(t, y) - log_z);
      double indicator = gold[t] == static_cast<int>(y) ? 1.0 : 0.0;
      d_emissions(t, y) += scale * (marginal - indicator);
    }

  std::size_t side = L + 2;
  for (std::size_t y = 0; y < L; ++y) {
    if (lat.allowed[lat.start() * side + y]) {
      double marginal = std::exp(alpha(0, y) + beta(0, y) - log_z);
      double indicator = gold[0] == static_cast<int>(y) ? 1.0 : 0.0;
      d_transitions(lat.start(), y) += scale * (marginal - indicator);
    }
    if (lat.allowed[y * side + lat.stop()]) {
      double marginal = std::exp(alpha(n - 1, y) + beta(n - 1, y) - log_z);
      double indicator = gold[n - 1] == static_cast<int>(y) ? 1.0 : 0.0;
      d_transitions(y, lat.stop()) += scale * (marginal - indicator);
    }
  }
  for (std::size_t t = 0; t + 1 < n; ++t)
    for (std::size_t y = 0; y < L; ++y) {
      if (alpha(t, y) == kNegInf) continue;
      for (std::size_t q = 0; q < L; ++q) {
        if (!lat.allowed[y * side + q]) continue;
        double pairwise = std::exp(alpha(t, y) + lat.trans(y, q) +
                                   lat.emissions(t + 1, q) + beta(t + 1, q) -
                                   log_z);
        double indicator = (gold[t] == static_cast<int>(y) &&
                            gold[t + 1] == static_cast<int>(q))
                               ? 1.0
                               : 0.0;
        d_transitions(y, q) += scale * (pairwise - indicator);
      }
    }

  return log_z - path_score(lat, gold);  // instance NLL
}

}  // namespace crf

// ---------------------------------------------------------------------------

// Forbids transitions that would break BIO decoding: into START, out of
// STOP, and into I-x from anything other than B-x/I-x.
inline std::vector<std::uint8_t> bio_transition_mask(const TagScheme& scheme) {
  std::size_t L = scheme.num_labels();
  std::size_t side = L + 2;
  std::size_t start = L, stop = L + 1;
  std::vector<std::uint8_t> allowed(side * side, 1);
  for (std::size_t a = 0; a < side; ++a) {
    allowed[a * side + start] = 0;
    allowed[stop * side + a] = 0;
  }
  for (std::size_t b = 0; b < L; ++b) {
    if (!TagScheme::is_inside(static_cast<int>(b))) continue;
    int cat = TagScheme::category_of(static_cast<int>(b));
    for (std::size_t a = 0; a < side; ++a) {
      bool ok = a < L && a != TagScheme::kOutside &&
                TagScheme::category_of(static_cast<int>(a)) == cat;
      allowed[a * side + b] = ok ? 1 : 0;
    }
  }
  return allowed;
}

struct TaggerModel {
  TagScheme scheme;
  LikelihoodMode mode = LikelihoodMode::Crf;
  EncoderKind encoder_kind = EncoderKind::Builtin;
  std::size_t hidden_dim = 64;
  EncoderParams encoder;           // used when encoder_kind == Builtin
  Matrix emission_w;               // hidden_dim x num_labels
  std::vector<double> emission_b;  // num_labels
  Matrix transitions;              // (L+2) x (L+2) incl. START/STOP
  std::vector<std::uint8_t> allowed;

  int num_labels() const { return scheme.num_labels(); }
  std::size_t start_index() const { return scheme.num_labels(); }
  std::size_t stop_index() const { return scheme.num_labels() + 1; }

  crf::Lattice lattice(const Matrix& raw_emissions) const {
    return crf::Lattice{raw_emissions, transitions, allowed,
                        mode == LikelihoodMode::Crf};
  }

  EncoderBackend backend(const ExternalEmbeddingStore* store = nullptr) const {
    if (encoder_kind == EncoderKind::External) {
      if (!store)
        throw MissingEmbeddingError("model uses external embeddings but no store given");
      return EncoderBackend{nullptr, store};
    }
    return EncoderBackend{&encoder, nullptr};
  }
};

inline TaggerModel make_tagger_model(const TagScheme& scheme,
                                     LikelihoodMode mode, EncoderKind kind,
                                     std::size_t hidden_dim) {
  TaggerModel m;
  m.scheme = scheme;
  m.mode = mode;
  m.encoder_kind = kind;
  m.hidden_dim = hidden_dim;
  std::size_t L = scheme.num_labels();
  m.emission_w = Matrix(hidden_dim, L);
  m.emission_b.assign(L, 0.0);
  m.transitions = Matrix(L + 2, L + 2);
  m.allowed = bio_transition_mask(scheme);
  return m;
}

// scores[i][y] = (W^T h_i + b)[y], one row per framed position. Sentinel and
// trigger rows are kept; downstream ops slice out the raw positions.
inline Matrix emission_scores(const Matrix& h, const TaggerModel& model) {
  if (h.cols != model.emission_w.rows)
    throw DimensionMismatchError(
        "hidden dim " + std::to_string(h.cols) + " does not match emission weights " +
        std::to_string(model.emission_w.rows));
  std::size_t L = model.emission_w.cols;
  Matrix scores(h.rows, L);
  for (std::size_t i = 0; i < h.rows; ++i) {
    double* out = scores.row(i);
    for (std::size_t y = 0; y < L; ++y) out[y] = model.emission_b[y];
    const double* hi = h.row(i);
    for (std::size_t j = 0; j < h.cols; ++j) {
      double hij = hi[j];
      if (hij == 0.0) continue;
      const double* wrow = model.emission_w.row(j);
      for (std::size_t y = 0; y < L; ++y) out[y] += hij * wrow[y];
    }
  }
  return scores;
}

inline Matrix raw_scores(const Matrix& framed_scores, const FramedInput& f) {
  Matrix out(f.raw_map.size(), framed_scores.cols);
  for (std::size_t i = 0; i < f.raw_map.size(); ++i)
    for (std::size_t y = 0; y < framed_scores.cols; ++y)
      out(i, y) = framed_scores(f.raw_map[i], y);
  return out;
}

inline double log_partition(const Matrix& raw_emissions,
                            const TaggerModel& model) {
  if (model.mode != LikelihoodMode::Crf)
    throw ModeError("log_partition requires CRF mode");
  if (raw_emissions.rows == 0)
    throw DimensionMismatchError("log_partition needs at least one raw position");
  return crf::log_partition(model.lattice(raw_emissions));
}

namespace detail {

inline double softmax_log_likelihood(const Matrix& raw_emissions,
                                     const std::vector<int>& gold) {
  double total = 0.0;
  std::vector<double> row(raw_emissions.cols);
  for (std::size_t t = 0; t < raw_emissions.rows; ++t) {
    for (std::size_t y = 0; y < raw_emissions.cols; ++y)
      row[y] = raw_emissions(t, y);
    total += raw_emissions(t, gold[t]) - crf::logsumexp(row);
  }
  return total;
}

}  // namespace detail

inline double log_likelihood(const Matrix& raw_emissions,
                             const TagSequence& gold,
                             const TaggerModel& model) {
  if (gold.scheme != model.scheme)
    throw SchemeMismatchError("gold tag scheme does not match the model");
  if (!gold.bio_valid()) throw InvalidBioError("gold sequence is not BIO-valid");
  if (gold.size() != raw_emissions.rows)
    throw DimensionMismatchError("gold length does not match emission rows");
  if (model.mode == LikelihoodMode::Softmax)
    return detail::softmax_log_likelihood(raw_emissions, gold.labels);
  crf::Lattice lat = model.lattice(raw_emissions);
  return crf::path_score(lat, gold.labels) - crf::log_partition(lat);
}

inline TagSequence viterbi(const Matrix& raw_emissions,
                           const TaggerModel& model) {
  return TagSequence{model.scheme,
                     crf::viterbi_path(model.lattice(raw_emissions))};
}

// ---------------------------------------------------------------------------
// Gradients and training plumbing.

// One supervised instance: a sentence, an optional stage-two trigger, and
// gold labels over the raw tokens.
struct TrainInstance {
  Sentence sentence;
  std::optional<Span> trigger;
  TagSequence gold;
};

inline FramedInput frame_instance(const TrainInstance& inst,
                                  std::size_t max_len = kMaxFramedLen) {
  return inst.trigger ? frame_stage2(inst.sentence, *inst.trigger, max_len)
                      : frame_stage1(inst.sentence, max_len);
}

struct Gradients {
  Matrix emission_w;
  std::vector<double> emission_b;
  Matrix transitions;
  Matrix embeddings;          // builtin encoder only
  Matrix segment_embeddings;  //
  Matrix proj_w;              //
  std::vector<double> proj_b;
  double mean_nll = 0.0;
};

inline Gradients zero_gradients(const TaggerModel& model) {
  Gradients g;
  g.emission_w = Matrix(model.emission_w.rows, model.emission_w.cols);
  g.emission_b.assign(model.emission_b.size(), 0.0);
  g.transitions = Matrix(model.transitions.rows, model.transitions.cols);
  if (model.encoder_kind == EncoderKind::Builtin) {
    g.embeddings = Matrix(model.encoder.embeddings.rows, model.encoder.embeddings.cols);
    g.segment_embeddings =
        Matrix(model.encoder.segment_embeddings.rows, model.encoder.segment_embeddings.cols);
    g.proj_w = Matrix(model.encoder.proj_w.rows, model.encoder.proj_w.cols);
    g.proj_b.assign(model.encoder.proj_b.size(), 0.0);
  }
  return g;
}

namespace detail {

// Backpropagates scale * dNLL/d(raw emission scores) through the emission
// projection and, for the built-in backend, the encoder. Returns the
// instance NLL.
inline double instance_backward(const TaggerModel& model,
                                const TrainInstance& inst,
                                const ExternalEmbeddingStore* store,
                                double scale, Gradients& grads,
                                std::size_t max_len) {
  FramedInput f = frame_instance(inst, max_len);
  Matrix h = encode(f, model.backend(store));
  Matrix scores = emission_scores(h, model);
  Matrix raw = raw_scores(scores, f);
  std::size_t n = raw.rows, L = raw.cols;

  if (inst.gold.scheme != model.scheme)
    throw SchemeMismatchError("gold tag scheme does not match the model");
  if (!inst.gold.bio_valid())
    throw InvalidBioError("gold sequence is not BIO-valid");
  if (inst.gold.size() != n)
    throw DimensionMismatchError("gold length does not match sentence");

  Matrix d_raw(n, L);
  double nll = 0.0;
  if (model.mode == LikelihoodMode::Crf) {
    nll = crf::nll_gradients(model.lattice(raw), inst.gold.labels, scale, d_raw,
                             grads.transitions);
  } else {
    std::vector<double> row(L);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t y = 0; y < L; ++y) row[y] = raw(t, y);
      double lse = crf::logsumexp(row);
      nll += lse - raw(t, inst.gold.labels[t]);
      for (std::size_t y = 0; y < L; ++y) {
        double p = std::exp(raw(t, y) - lse);
        double indicator = inst.gold.labels[t] == static_cast<int>(y) ? 1.0 : 0.0;
        d_raw(t, y) = scale * (p - indicator);
      }
    }
  }

  // Emission projection: dW += h^T dS, db += column sums, dH = dS W^T.
  Matrix d_h(h.rows, h.cols);
  bool any_dh = model.encoder_kind == EncoderKind::Builtin;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t fp = f.raw_map[i];
    const double* hrow = h.row(fp);
    for (std::size_t y = 0; y < L; ++y) {
      double g = d_raw(i, y);
      if (g == 0.0) continue;
      grads.emission_b[y] += g;
      for (std::size_t j = 0; j < h.cols; ++j)
        grads.emission_w(j, y) += hrow[j] * g;
      if (any_dh)
        for (std::size_t j = 0; j < h.cols; ++j)
          d_h(fp, j) += model.emission_w(j, y) * g;
    }
  }

  if (model.encoder_kind == EncoderKind::Builtin) {
    const EncoderParams& p = model.encoder;
    std::vector<int> ids = framed_token_ids(f, p.vocab);
    std::vector<double> pool = trigger_pool(f, ids, p);
    std::vector<double> d_pool(p.embedding_dim, 0.0);
    std::size_t d_e = p.embedding_dim;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t fp = f.raw_map[i];
      const double* dh = d_h.row(fp);
      bool live = false;
      for (std::size_t j = 0; j < h.cols; ++j)
        if (dh[j] != 0.0) { live = true; break; }
      if (!live) continue;
      std::vector<double> x = encoder_input(f, ids, pool, fp, p);
      for (std::size_t j = 0; j < h.cols; ++j) grads.proj_b[j] += dh[j];
      std::vector<double> d_x(x.size(), 0.0);
      for (std::size_t a = 0; a < x.size(); ++a) {
        const double* wrow = p.proj_w.row(a);
        double* grow = grads.proj_w.row(a);
        double xa = x[a];
        double acc = 0.0;
        for (std::size_t j = 0; j < h.cols; ++j) {
          grow[j] += xa * dh[j];
          acc += wrow[j] * dh[j];
        }
        d_x[a] = acc;
      }
      int prev = fp == 0 ? Vocabulary::kPad : ids[fp - 1];
      int next = fp + 1 == f.size() ? Vocabulary::kPad : ids[fp + 1];
      int window[3] = {prev, ids[fp], next};
      for (int b = 0; b < 3; ++b) {
        double* erow = grads.embeddings.row(window[b]);
        for (std::size_t j = 0; j < d_e; ++j) erow[j] += d_x[b * d_e + j];
      }
      double* srow = grads.segment_embeddings.row(f.pieces[fp].segment);
      for (std::size_t j = 0; j < d_e; ++j) srow[j] += d_x[3 * d_e + j];
      for (std::size_t j = 0; j < d_e; ++j) d_pool[j] += d_x[4 * d_e + j];
    }
    if (f.has_trigger()) {
      double inv = 1.0 / static_cast<double>(f.trigger_end - f.trigger_begin);
      for (std::size_t pos = f.trigger_begin; pos < f.trigger_end; ++pos) {
        double* erow = grads.embeddings.row(ids[pos]);
        for (std::size_t j = 0; j < d_e; ++j) erow[j] += inv * d_pool[j];
      }
    }
  }
  return nll;
}

}  // namespace detail

// Exact analytic gradient of the mean negative log-likelihood over a batch.
inline Gradients gradients(const std::vector<TrainInstance>& batch,
                           const TaggerModel& model,
                           const ExternalEmbeddingStore* store = nullptr,
                           std::size_t max_len = kMaxFramedLen) {
  if (batch.empty()) throw EmptyDatasetError("gradient batch is empty");
  Gradients g = zero_gradients(model);
  double scale = 1.0 / static_cast<double>(batch.size());
  double total_nll = 0.0;
  for (const TrainInstance& inst : batch)
    total_nll += detail::instance_backward(model, inst, store, scale, g, max_len);
  g.mean_nll = total_nll * scale;
  return g;
}

inline double instance_nll(const TaggerModel& model, const TrainInstance& inst,
                           const ExternalEmbeddingStore* store = nullptr,
                           std::size_t max_len = kMaxFramedLen) {
  FramedInput f = frame_instance(inst, max_len);
  Matrix raw = raw_scores(emission_scores(encode(f, model.backend(store)), model), f);
  return -log_likelihood(raw, inst.gold, model);
}

// Flat views over every parameter coordinate, in a fixed order shared with
// gradient_view so optimizers and checkers can walk them together.
inline std::vector<double*> parameter_view(TaggerModel& model) {
  std::vector<double*> out;
  auto push = [&](std::vector<double>& v) {
    for (double& x : v) out.push_back(&x);
  };
  push(model.emission_w.data);
  push(model.emission_b);
  push(model.transitions.data);
  if (model.encoder_kind == EncoderKind::Builtin) {
    push(model.encoder.embeddings.data);
    push(model.encoder.segment_embeddings.data);
    push(model.encoder.proj_w.data);
    push(model.encoder.proj_b);
  }
  return out;
}

inline std::vector<const double*> gradient_view(const Gradients& g,
                                                const TaggerModel& model) {
  std::vector<const double*> out;
  auto push = [&](const std::vector<double>& v) {
    for (const double& x : v) out.push_back(&x);
  };
  push(g.emission_w.data);
  push(g.emission_b);
  push(g.transitions.data);
  if (model.encoder_kind == EncoderKind::Builtin) {
    push(g.embeddings.data);
    push(g.segment_embeddings.data);
    push(g.proj_w.data);
    push(g.proj_b);
  }
  return out;
}

inline std::vector<double> flat_analytic_gradient(
    const TaggerModel& model, const TrainInstance& inst,
    const ExternalEmbeddingStore* store = nullptr) {
  Gradients g = gradients({inst}, model, store);
  std::vector<double> out;
  for (const double* p : gradient_view(g, model)) out.push_back(*p);
  return out;
}

inline std::vector<double> flat_numeric_gradient(
    const TaggerModel& model, const TrainInstance& inst, double epsilon,
    const ExternalEmbeddingStore* store = nullptr) {
  TaggerModel probe = model;
  std::vector<double*> params = parameter_view(probe);
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    double saved = *params[i];
    *params[i] = saved + epsilon;
    double up = instance_nll(probe, inst, store);
    *params[i] = saved - epsilon;
    double down = instance_nll(probe, inst, store);
    *params[i] = saved;
    out[i] = (up - down) / (2.0 * epsilon);
  }
  return out;
}

// |a - n| / max(1, |a|, |n|): relative for large coordinates, absolute for
// small ones.
inline double max_rel_error(const std::vector<double>& analytic,
                            const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric[i])});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// Central-difference comparison over every parameter coordinate.
inline double gradient_check(const TaggerModel& model, const TrainInstance& inst,
                             double epsilon,
                             const ExternalEmbeddingStore* store = nullptr) {
  return max_rel_error(flat_analytic_gradient(model, inst, store),
                       flat_numeric_gradient(model, inst, epsilon, store));
}

// ---------------------------------------------------------------------------
// Versioned JSON serialization ("easqe-model-v1").

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.cols; ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m;
  m.rows = j.size();
  m.cols = m.rows == 0 ? 0 : j.at(0).size();
  m.data.reserve(m.rows * m.cols);
  for (const auto& row : j) {
    if (row.size() != m.cols) throw FormatError("ragged matrix in model file");
    for (const auto& v : row) m.data.push_back(v.get<double>());
  }
  return m;
}

}  // namespace detail

inline nlohmann::json model_to_json(const TaggerModel& model) {
  nlohmann::json j;
  j["format"] = "easqe-model-v1";
  j["scheme"] = to_string(model.scheme.kind);
  j["mode"] = to_string(model.mode);
  j["encoder"] = to_string(model.encoder_kind);
  j["hidden_dim"] = model.hidden_dim;
  j["emission_w"] = detail::matrix_to_json(model.emission_w);
  j["emission_b"] = model.emission_b;
  j["transitions"] = detail::matrix_to_json(model.transitions);
  if (model.encoder_kind == EncoderKind::Builtin) {
    nlohmann::json b;
    b["embedding_dim"] = model.encoder.embedding_dim;
    b["vocab"] = model.encoder.vocab.tokens;
    b["embeddings"] = detail::matrix_to_json(model.encoder.embeddings);
    b["segment_embeddings"] = detail::matrix_to_json(model.encoder.segment_embeddings);
    b["proj_w"] = detail::matrix_to_json(model.encoder.proj_w);
    b["proj_b"] = model.encoder.proj_b;
    j["builtin"] = std::move(b);
  }
  return j;
}

inline TaggerModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "easqe-model-v1")
    throw FormatError("not an easqe-model-v1 document");
  auto scheme_kind = scheme_from_string(j.at("scheme").get<std::string>());
  if (!scheme_kind) throw FormatError("unknown scheme in model file");
  TagScheme scheme{*scheme_kind};
  std::string mode_str = j.at("mode").get<std::string>();
  LikelihoodMode mode =
      mode_str == "crf" ? LikelihoodMode::Crf : LikelihoodMode::Softmax;
  if (mode_str != "crf" && mode_str != "softmax")
    throw FormatError("unknown mode in model file");
  std::string enc_str = j.at("encoder").get<std::string>();
  EncoderKind kind =
      enc_str == "builtin" ? EncoderKind::Builtin : EncoderKind::External;
  if (enc_str != "builtin" && enc_str != "external")
    throw FormatError("unknown encoder kind in model file");

  TaggerModel m = make_tagger_model(scheme, mode, kind,
                                    j.at("hidden_dim").get<std::size_t>());
  m.emission_w = detail::matrix_from_json(j.at("emission_w"));
  m.emission_b = j.at("emission_b").get<std::vector<double>>();
  m.transitions = detail::matrix_from_json(j.at("transitions"));
  std::size_t L = scheme.num_labels();
  if (m.emission_w.rows != m.hidden_dim || m.emission_w.cols != L ||
      m.emission_b.size() != L || m.transitions.rows != L + 2 ||
      m.transitions.cols != L + 2)
    throw FormatError("model tensor shapes do not match the scheme");
  if (kind == EncoderKind::Builtin) {
    const nlohmann::json& b = j.at("builtin");
    EncoderParams p;
    p.embedding_dim = b.at("embedding_dim").get<std::size_t>();
    p.hidden_dim = m.hidden_dim;
    p.vocab.tokens = b.at("vocab").get<std::vector<std::string>>();
    p.vocab.index.clear();
    for (std::size_t i = 0; i < p.vocab.tokens.size(); ++i)
      p.vocab.index.emplace(p.vocab.tokens[i], static_cast<int>(i));
    p.embeddings = detail::matrix_from_json(b.at("embeddings"));
    p.segment_embeddings = detail::matrix_from_json(b.at("segment_embeddings"));
    p.proj_w = detail::matrix_from_json(b.at("proj_w"));
    p.proj_b = b.at("proj_b").get<std::vector<double>>();
    if (p.embeddings.rows != p.vocab.tokens.size() ||
        p.embeddings.cols != p.embedding_dim ||
        p.proj_w.rows != p.input_dim() || p.proj_w.cols != p.hidden_dim ||
        p.proj_b.size() != p.hidden_dim)
      throw FormatError("encoder tensor shapes are inconsistent");
    m.encoder = std::move(p);
  }
  return m;
}

inline void save_model(const TaggerModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write model file: " + path);
  out << model_to_json(model).dump(1) << '\n';
  if (!out) throw IoError("failed writing model file: " + path);
}

inline TaggerModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("model file is not valid JSON: " + path);
  return model_from_json(j);
}

}  // namespace easqe
