// Training: gold instance construction per stage/task, the adaptive-moment
// optimizer, dev-set span F1, and the early-stopping loop.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "easqe/dataset.hpp"
#include "easqe/encoder.hpp"
#include "easqe/errors.hpp"
#include "easqe/rng.hpp"
#include "easqe/tagger.hpp"
#include "easqe/tags.hpp"

namespace easqe {

enum class Stage { One, Two };

inline TagScheme scheme_for(Stage stage, TaskKind task) {
  if (stage == Stage::One)
    return TagScheme{task == TaskKind::Ope ? SchemeKind::Stage1Span
                                           : SchemeKind::Stage1Easqe};
  return TagScheme{task == TaskKind::Easqe ? SchemeKind::Stage2Easqe
                                           : SchemeKind::Stage2Aspect};
}

struct TrainConfig {
  LikelihoodMode mode = LikelihoodMode::Crf;
  EncoderKind encoder_kind = EncoderKind::Builtin;
  double learning_rate = 0.0;  // 0: backend default (2e-5 external, 1e-2 builtin)
  std::size_t batch_size = 4;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  std::size_t max_seq_len = kMaxFramedLen;  // framed cap, sentinels included
  std::size_t embedding_dim = 32;
  std::size_t hidden_dim = 64;

  double effective_lr() const {
    if (learning_rate > 0.0) return learning_rate;
    return encoder_kind == EncoderKind::External ? 2e-5 : 1e-2;
  }
};

// --- gold instance construction ----------------------------------------------

namespace detail {

inline std::vector<CategorizedSpan> stage1_gold_spans(const Record& r,
                                                      TaskKind task,
                                                      const TagScheme& scheme) {
  std::set<CategorizedSpan> unique;
  switch (task) {
    case TaskKind::Easqe:
      for (const Quadruple& q : r.quads)
        unique.insert({q.opinion, scheme.category_of_polarity(q.polarity)});
      break;
    case TaskKind::Aste:
      for (const Triple& t : r.triples)
        unique.insert({t.opinion, scheme.category_of_polarity(t.polarity)});
      break;
    case TaskKind::Ope:
      for (const Pair& p : r.pairs) unique.insert({p.opinion, 0});
      break;
  }
  return {unique.begin(), unique.end()};
}

// Targets grouped per distinct opinion span; map order keeps triggers
// deterministic.
inline std::map<Span, std::vector<CategorizedSpan>> stage2_gold_targets(
    const Record& r, TaskKind task) {
  std::map<Span, std::set<CategorizedSpan>> grouped;
  switch (task) {
    case TaskKind::Easqe:
      for (const Quadruple& q : r.quads) {
        auto& targets = grouped[q.opinion];
        if (q.entity) targets.insert({*q.entity, 0});
        if (q.aspect) targets.insert({*q.aspect, 1});
      }
      break;
    case TaskKind::Aste:
      for (const Triple& t : r.triples) grouped[t.opinion].insert({t.target, 0});
      break;
    case TaskKind::Ope:
      for (const Pair& p : r.pairs) grouped[p.opinion].insert({p.target, 0});
      break;
  }
  std::map<Span, std::vector<CategorizedSpan>> out;
  for (auto& [opinion, targets] : grouped)
    out.emplace(opinion, std::vector<CategorizedSpan>(targets.begin(), targets.end()));
  return out;
}

}  // namespace detail

inline std::vector<TrainInstance> stage1_instances(const Dataset& d,
                                                   const TagScheme& scheme) {
  std::vector<TrainInstance> out;
  for (const Record& r : d.records) {
    auto spans = detail::stage1_gold_spans(r, d.task, scheme);
    out.push_back(TrainInstance{
        r.sentence, std::nullopt,
        tags_from_spans(spans, r.sentence.size(), scheme)});
  }
  return out;
}

inline std::vector<TrainInstance> stage2_instances(const Dataset& d,
                                                   const TagScheme& scheme) {
  std::vector<TrainInstance> out;
  for (const Record& r : d.records) {
    for (const auto& [opinion, targets] :
         detail::stage2_gold_targets(r, d.task)) {
      out.push_back(TrainInstance{
          r.sentence, opinion,
          tags_from_spans(targets, r.sentence.size(), scheme)});
    }
  }
  return out;
}

inline std::vector<TrainInstance> build_instances(const Dataset& d, Stage stage,
                                                  const TagScheme& scheme) {
  return stage == Stage::One ? stage1_instances(d, scheme)
                             : stage2_instances(d, scheme);
}

// --- optimizer -----------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t size) : m(size, 0.0), v(size, 0.0) {}
};

inline void adam_step(const std::vector<double*>& params,
                      const std::vector<const double*>& grads,
                      AdamState& state, double lr) {
  ++state.t;
  double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = *grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    double m_hat = state.m[i] / bias1;
    double v_hat = state.v[i] / bias2;
    *params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

// --- dev metric ------------------------------------------------------------------

// Micro span F1 of viterbi output against gold, matched on (start, end,
// category); the stage-appropriate early-stopping signal.
inline double span_f1(const TaggerModel& model,
                      const std::vector<TrainInstance>& instances,
                      const ExternalEmbeddingStore* store = nullptr,
                      std::size_t max_len = kMaxFramedLen) {
  std::size_t matched = 0, predicted = 0, gold = 0;
  for (const TrainInstance& inst : instances) {
    FramedInput f = frame_instance(inst, max_len);
    Matrix raw = raw_scores(
        emission_scores(encode(f, model.backend(store)), model), f);
    TagSequence hyp = viterbi(raw, model);
    auto hyp_spans = spans_from_tags(hyp, inst.sentence.tokens);
    auto gold_spans = spans_from_tags(inst.gold, inst.sentence.tokens);
    predicted += hyp_spans.size();
    gold += gold_spans.size();
    for (const CategorizedSpan& cs : hyp_spans)
      if (std::find(gold_spans.begin(), gold_spans.end(), cs) != gold_spans.end())
        ++matched;
  }
  if (predicted == 0 || gold == 0 || matched == 0) return 0.0;
  double p = static_cast<double>(matched) / static_cast<double>(predicted);
  double r = static_cast<double>(matched) / static_cast<double>(gold);
  return 2.0 * p * r / (p + r);
}

// --- training loop ----------------------------------------------------------------

struct TrainResult {
  TaggerModel model;
  double best_dev_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

inline Vocabulary build_vocabulary(const Dataset& d) {
  Vocabulary vocab;
  for (const Record& r : d.records)
    for (const std::string& token : r.sentence.tokens) vocab.add(token);
  return vocab;
}

// Minimizes mean NLL with Adam, shuffling each epoch with the seeded
// generator; keeps the best-dev checkpoint and stops once `patience`
// epochs pass without improvement.
inline TrainResult train_detailed(const Dataset& train_set,
                                  const Dataset& dev_set, Stage stage,
                                  TaskKind task, const TrainConfig& config,
                                  const ExternalEmbeddingStore* store = nullptr,
                                  std::ostream* log = nullptr) {
  if (train_set.records.empty()) throw EmptyDatasetError("training set is empty");
  if (dev_set.records.empty()) throw EmptyDatasetError("dev set is empty");
  if (train_set.task != task || dev_set.task != task)
    throw SchemeMismatchError("dataset task does not match the requested task");
  if (config.encoder_kind == EncoderKind::External && !store)
    throw MissingEmbeddingError("external encoder requested but no store given");
  if (config.effective_lr() <= 0.0 || config.batch_size == 0 ||
      config.max_epochs == 0 || config.embedding_dim == 0 ||
      config.hidden_dim == 0 || config.max_seq_len < 3)
    throw Error("non-positive training hyperparameter");

  TagScheme scheme = scheme_for(stage, task);
  std::vector<TrainInstance> train_insts = build_instances(train_set, stage, scheme);
  std::vector<TrainInstance> dev_insts = build_instances(dev_set, stage, scheme);
  if (train_insts.empty()) throw EmptyDatasetError("no training instances");

  Rng rng(config.seed);
  std::size_t hidden = config.hidden_dim;
  if (config.encoder_kind == EncoderKind::External) {
    // Hidden width comes from the store; probe the first instance.
    FramedInput f = frame_instance(train_insts.front(), config.max_seq_len);
    const Matrix* m = store->find(f.key);
    if (!m) throw MissingEmbeddingError("no external embedding for key '" + f.key + "'");
    hidden = m->cols;
  }
  TaggerModel model =
      make_tagger_model(scheme, config.mode, config.encoder_kind, hidden);
  if (config.encoder_kind == EncoderKind::Builtin) {
    model.encoder = init_encoder_params(build_vocabulary(train_set),
                                        config.embedding_dim, hidden, rng);
    for (double& v : model.emission_w.data) v = rng.uniform(-0.1, 0.1);
  } else {
    for (double& v : model.emission_w.data) v = rng.uniform(-0.1, 0.1);
  }

  AdamState adam(parameter_view(model).size());
  double lr = config.effective_lr();

  TrainResult result;
  result.model = model;
  double best_f1 = -1.0;
  std::size_t since_improve = 0;

  std::vector<std::size_t> order(train_insts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_nll = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<TrainInstance> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train_insts[order[i]]);
      Gradients grads = gradients(batch, model, store, config.max_seq_len);
      std::vector<double*> params = parameter_view(model);
      adam_step(params, gradient_view(grads, model), adam, lr);
      epoch_nll += grads.mean_nll;
      ++batches;
    }
    double dev_f1 = span_f1(model, dev_insts, store, config.max_seq_len);
    result.epochs_run = epoch;
    if (log)
      *log << "epoch " << epoch << ": train nll " << (epoch_nll / batches)
           << ", dev span F1 " << dev_f1 << "\n";
    if (dev_f1 > best_f1) {
      best_f1 = dev_f1;
      result.model = model;
      result.best_dev_f1 = dev_f1;
      result.best_epoch = epoch;
      since_improve = 0;
    } else {
      ++since_improve;
    }
    if (since_improve >= config.patience) break;
  }
  return result;
}

inline TaggerModel train(const Dataset& train_set, const Dataset& dev_set,
                         Stage stage, TaskKind task, const TrainConfig& config,
                         const ExternalEmbeddingStore* store = nullptr) {
  return train_detailed(train_set, dev_set, stage, task, config, store).model;
}

}  // namespace easqe
