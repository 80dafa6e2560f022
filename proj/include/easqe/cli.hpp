// Batch command-line surface: train, predict, eval, convert, stats, diff,
// gradcheck. Exit codes: 0 success, 1 usage error, 2 data/validation error.
#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "easqe/dataset.hpp"
#include "easqe/eval.hpp"
#include "easqe/pipeline.hpp"
#include "easqe/tagger.hpp"
#include "easqe/train.hpp"

namespace easqe {
namespace cli {

inline std::uint64_t default_seed() {
  if (const char* env = std::getenv("EASQE_SEED")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return static_cast<std::uint64_t>(v);
  }
  return 1;
}

// Optional JSON config; explicit flags win over config values.
struct ConfigFile {
  nlohmann::json values = nlohmann::json::object();

  static ConfigFile load(const std::string& path) {
    ConfigFile cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    cfg.values = nlohmann::json::parse(in, nullptr, false);
    if (cfg.values.is_discarded() || !cfg.values.is_object())
      throw FormatError("config file is not a JSON object: " + path);
    return cfg;
  }

  template <class T>
  void apply(const CLI::App* cmd, const std::string& flag,
             const std::string& key, T& target) const {
    if (cmd->count(flag) == 0 && values.contains(key))
      target = values.at(key).get<T>();
  }
};

inline TaskKind parse_task(const std::string& s) {
  auto t = task_from_string(s);
  if (!t) throw CLI::ValidationError("--task", "unknown task '" + s + "'");
  return *t;
}

inline LikelihoodMode parse_mode(const std::string& s) {
  if (s == "crf") return LikelihoodMode::Crf;
  if (s == "softmax") return LikelihoodMode::Softmax;
  throw CLI::ValidationError("--mode", "unknown mode '" + s + "'");
}

inline EncoderKind parse_encoder(const std::string& s) {
  if (s == "builtin") return EncoderKind::Builtin;
  if (s == "external") return EncoderKind::External;
  throw CLI::ValidationError("--encoder", "unknown encoder '" + s + "'");
}

inline void write_json_out(const std::string& path, const nlohmann::json& j) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write output file: " + path);
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing output file: " + path);
}

// Deterministic small fixture for the gradcheck subcommand: a built-in
// encoder model with random parameters and one random-ish instance.
struct GradcheckFixture {
  TaggerModel model;
  TrainInstance instance;
};

inline GradcheckFixture make_gradcheck_fixture(std::uint64_t seed, Stage stage,
                                               LikelihoodMode mode) {
  Rng rng(seed);
  Sentence s{"gc", {"the", "sushi", "price", "was", "quite", "reasonable"}};
  TagScheme scheme = scheme_for(stage, TaskKind::Easqe);
  Vocabulary vocab;
  for (const auto& t : s.tokens) vocab.add(t);

  TaggerModel model = make_tagger_model(scheme, mode, EncoderKind::Builtin, 6);
  model.encoder = init_encoder_params(vocab, 4, 6, rng);
  for (double& v : model.emission_w.data) v = rng.uniform(-0.5, 0.5);
  for (double& v : model.emission_b) v = rng.uniform(-0.5, 0.5);
  for (double& v : model.transitions.data) v = rng.uniform(-0.5, 0.5);

  TrainInstance inst;
  inst.sentence = s;
  if (stage == Stage::One) {
    inst.gold = tags_from_spans({{make_span(s, 4, 6), 0}, {make_span(s, 1, 2), 2}},
                                s.size(), scheme);
  } else {
    inst.trigger = make_span(s, 4, 6);
    inst.gold = tags_from_spans({{make_span(s, 1, 2), 0}, {make_span(s, 2, 3), 1}},
                                s.size(), scheme);
  }
  return GradcheckFixture{std::move(model), std::move(inst)};
}

namespace detail {

struct TrainFlags {
  std::string train_path, dev_path, config_path, embeddings_path;
  std::string task_str = "easqe";
  std::string mode_str = "crf";
  std::string encoder_str = "builtin";
  int stage = 1;
  std::uint64_t seed = default_seed();
  double lr = 0.0;
  std::size_t batch = 4;
  std::size_t epochs = 50;
  std::size_t patience = 5;
  std::size_t embedding_dim = 32;
  std::size_t hidden_dim = 64;

  void add_common(CLI::App* cmd, bool with_stage) {
    cmd->add_option("--train", train_path, "training dataset (JSONL)");
    cmd->add_option("--dev", dev_path, "development dataset for early stopping");
    if (with_stage)
      cmd->add_option("--stage", stage, "tagging stage (1 or 2)")
          ->check(CLI::Range(1, 2));
    cmd->add_option("--task", task_str, "easqe, aste, or ope");
    cmd->add_option("--mode", mode_str, "crf or softmax");
    cmd->add_option("--encoder", encoder_str, "builtin or external");
    cmd->add_option("--embeddings", embeddings_path,
                    "external contextual-embedding file");
    cmd->add_option("--seed", seed, "random seed (default: $EASQE_SEED or 1)");
    cmd->add_option("--lr", lr, "learning rate (default per encoder backend)");
    cmd->add_option("--batch", batch, "mini-batch size");
    cmd->add_option("--epochs", epochs, "maximum training epochs");
    cmd->add_option("--patience", patience, "early-stopping patience");
    cmd->add_option("--embedding-dim", embedding_dim, "built-in embedding width");
    cmd->add_option("--hidden-dim", hidden_dim, "hidden feature width");
    cmd->add_option("--config", config_path, "JSON config merged under flags");
  }

  void merge_config(const CLI::App* cmd, const ConfigFile& cfg) {
    cfg.apply(cmd, "--train", "train", train_path);
    cfg.apply(cmd, "--dev", "dev", dev_path);
    cfg.apply(cmd, "--task", "task", task_str);
    cfg.apply(cmd, "--mode", "mode", mode_str);
    cfg.apply(cmd, "--encoder", "encoder", encoder_str);
    cfg.apply(cmd, "--embeddings", "embeddings", embeddings_path);
    cfg.apply(cmd, "--seed", "seed", seed);
    cfg.apply(cmd, "--lr", "lr", lr);
    cfg.apply(cmd, "--batch", "batch", batch);
    cfg.apply(cmd, "--epochs", "epochs", epochs);
    cfg.apply(cmd, "--patience", "patience", patience);
    cfg.apply(cmd, "--embedding-dim", "embedding_dim", embedding_dim);
    cfg.apply(cmd, "--hidden-dim", "hidden_dim", hidden_dim);
  }

  TrainConfig to_config() const {
    TrainConfig c;
    c.mode = parse_mode(mode_str);
    c.encoder_kind = parse_encoder(encoder_str);
    c.learning_rate = lr;
    c.batch_size = batch;
    c.max_epochs = epochs;
    c.patience = patience;
    c.seed = seed;
    c.embedding_dim = embedding_dim;
    c.hidden_dim = hidden_dim;
    return c;
  }
};

inline Record extraction_to_record(const Sentence& s, const Extraction& ex) {
  Record r;
  r.sentence = s;
  r.quads = ex.quads;
  r.triples = ex.triples;
  r.pairs = ex.pairs;
  return r;
}

inline std::optional<ExternalEmbeddingStore> maybe_load_store(
    const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_external_embeddings(path);
}

}  // namespace detail

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"Trigger-Opinion toolkit: entity-aspect-opinion-sentiment "
               "quadruple extraction",
               "easqe"};
  app.require_subcommand(1);

  int exit_code = 0;

  // ---- train ----
  auto train_flags = std::make_shared<detail::TrainFlags>();
  auto model_out = std::make_shared<std::string>();
  auto train_out = std::make_shared<std::string>();
  CLI::App* train_cmd = app.add_subcommand("train", "train one tagging stage");
  train_flags->add_common(train_cmd, true);
  train_cmd->add_option("--model-out", *model_out, "where to write the model")
      ->required();
  train_cmd->add_option("--out", *train_out, "JSON training summary");
  train_cmd->callback([train_flags, model_out, train_out, train_cmd]() {
    ConfigFile cfg = ConfigFile::load(train_flags->config_path);
    train_flags->merge_config(train_cmd, cfg);
    if (train_flags->train_path.empty() || train_flags->dev_path.empty())
      throw CLI::RequiredError("--train and --dev");
    TaskKind task = parse_task(train_flags->task_str);
    Stage stage = train_flags->stage == 1 ? Stage::One : Stage::Two;
    TrainConfig config = train_flags->to_config();
    Dataset train_set = read_dataset(train_flags->train_path, task);
    Dataset dev_set = read_dataset(train_flags->dev_path, task);
    auto store = detail::maybe_load_store(train_flags->embeddings_path);
    TrainResult result =
        train_detailed(train_set, dev_set, stage, task, config,
                       store ? &*store : nullptr);
    save_model(result.model, *model_out);
    std::cout << "trained stage " << train_flags->stage << " (" << to_string(task)
              << ", " << to_string(config.mode) << "): best dev span F1 "
              << result.best_dev_f1 << " at epoch " << result.best_epoch << "/"
              << result.epochs_run << "\n";
    std::cout << "model written to " << *model_out << "\n";
    write_json_out(*train_out,
                   {{"model", *model_out},
                    {"task", to_string(task)},
                    {"stage", train_flags->stage},
                    {"best_dev_f1", result.best_dev_f1},
                    {"best_epoch", result.best_epoch},
                    {"epochs_run", result.epochs_run}});
  });

  // ---- predict ----
  auto pr_model1 = std::make_shared<std::string>();
  auto pr_model2 = std::make_shared<std::string>();
  auto pr_data = std::make_shared<std::string>();
  auto pr_out = std::make_shared<std::string>();
  auto pr_task = std::make_shared<std::string>("easqe");
  auto pr_emb = std::make_shared<std::string>();
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "run the two-stage pipeline over a dataset");
  predict_cmd->add_option("--model1", *pr_model1, "stage-one model")->required();
  predict_cmd->add_option("--model2", *pr_model2, "stage-two model")->required();
  predict_cmd->add_option("--data", *pr_data, "input dataset (JSONL)")->required();
  predict_cmd->add_option("--out", *pr_out, "predictions file (JSONL)")->required();
  predict_cmd->add_option("--task", *pr_task, "easqe, aste, or ope");
  predict_cmd->add_option("--embeddings", *pr_emb, "external embedding file");
  predict_cmd->callback([pr_model1, pr_model2, pr_data, pr_out, pr_task, pr_emb]() {
    TaskKind task = parse_task(*pr_task);
    TaggerModel model1 = load_model(*pr_model1);
    TaggerModel model2 = load_model(*pr_model2);
    Dataset data = read_dataset(*pr_data, task);
    auto store = detail::maybe_load_store(*pr_emb);
    Dataset predictions;
    predictions.task = task;
    std::size_t annotations = 0;
    for (const Record& r : data.records) {
      Extraction ex = predict(model1, model2, r.sentence, task,
                              store ? &*store : nullptr);
      Record out = detail::extraction_to_record(r.sentence, ex);
      annotations += out.quads.size() + out.triples.size() + out.pairs.size();
      predictions.records.push_back(std::move(out));
    }
    write_dataset(predictions, *pr_out);
    std::cout << "predicted " << annotations << " annotation(s) over "
              << predictions.records.size() << " sentence(s) -> " << *pr_out
              << "\n";
  });

  // ---- eval ----
  auto ev_flags = std::make_shared<detail::TrainFlags>();
  auto ev_model1 = std::make_shared<std::string>();
  auto ev_model2 = std::make_shared<std::string>();
  auto ev_data = std::make_shared<std::string>();
  auto ev_out = std::make_shared<std::string>();
  auto ev_runs = std::make_shared<std::size_t>(1);
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "exact-match evaluation; --runs N trains N seeds and averages");
  eval_cmd->add_option("--model1", *ev_model1, "stage-one model");
  eval_cmd->add_option("--model2", *ev_model2, "stage-two model");
  eval_cmd->add_option("--data", *ev_data, "evaluation dataset")->required();
  eval_cmd->add_option("--out", *ev_out, "JSON report path");
  eval_cmd->add_option("--runs", *ev_runs, "number of seeded training runs")
      ->check(CLI::PositiveNumber);
  ev_flags->add_common(eval_cmd, false);
  eval_cmd->callback([ev_flags, ev_model1, ev_model2, ev_data, ev_out, ev_runs,
                      eval_cmd]() {
    ConfigFile cfg = ConfigFile::load(ev_flags->config_path);
    ev_flags->merge_config(eval_cmd, cfg);
    TaskKind task = parse_task(ev_flags->task_str);
    Dataset data = read_dataset(*ev_data, task);
    auto store = detail::maybe_load_store(ev_flags->embeddings_path);
    const ExternalEmbeddingStore* store_ptr = store ? &*store : nullptr;

    if (eval_cmd->count("--runs") == 0) {
      if (ev_model1->empty() || ev_model2->empty())
        throw CLI::RequiredError("--model1 and --model2 (or --runs)");
      EvalReport report = evaluate(load_model(*ev_model1), load_model(*ev_model2),
                                   data, task, store_ptr);
      print_report(report, std::cout);
      write_json_out(*ev_out, report_to_json(report));
      return;
    }

    if (ev_flags->train_path.empty() || ev_flags->dev_path.empty())
      throw CLI::RequiredError("--train and --dev (with --runs)");
    Dataset train_set = read_dataset(ev_flags->train_path, task);
    Dataset dev_set = read_dataset(ev_flags->dev_path, task);
    TrainConfig base = ev_flags->to_config();

    std::vector<EvalReport> reports;
    for (std::size_t run = 0; run < *ev_runs; ++run) {
      TrainConfig config = base;
      config.seed = base.seed + run;
      TaggerModel m1 = train(train_set, dev_set, Stage::One, task, config, store_ptr);
      TaggerModel m2 = train(train_set, dev_set, Stage::Two, task, config, store_ptr);
      EvalReport report = evaluate(m1, m2, data, task, store_ptr);
      std::cout << "run " << run + 1 << " (seed " << config.seed << "):\n";
      print_report(report, std::cout);
      reports.push_back(std::move(report));
    }

    nlohmann::json mean_rows = nlohmann::json::object();
    std::cout << "mean over " << *ev_runs << " run(s):\n";
    for (std::size_t row = 0; row < reports.front().rows.size(); ++row) {
      const std::string& name = reports.front().rows[row].first;
      double p = 0, r = 0, f = 0;
      for (const EvalReport& report : reports) {
        p += report.rows[row].second.precision();
        r += report.rows[row].second.recall();
        f += report.rows[row].second.f1();
      }
      double n = static_cast<double>(reports.size());
      mean_rows[name] = {{"precision", p / n}, {"recall", r / n}, {"f1", f / n}};
      std::cout << "  " << name << ": P " << p / n << " R " << r / n << " F1 "
                << f / n << "\n";
    }
    nlohmann::json j;
    j["task"] = to_string(task);
    j["runs"] = *ev_runs;
    j["seed"] = base.seed;
    j["mean"] = std::move(mean_rows);
    nlohmann::json per_run = nlohmann::json::array();
    for (const EvalReport& report : reports) per_run.push_back(report_to_json(report));
    j["per_run"] = std::move(per_run);
    write_json_out(*ev_out, j);
  });

  // ---- convert ----
  auto cv_from = std::make_shared<std::string>();
  auto cv_to = std::make_shared<std::string>();
  auto cv_data = std::make_shared<std::string>();
  auto cv_out = std::make_shared<std::string>();
  auto cv_legacy = std::make_shared<bool>(false);
  CLI::App* convert_cmd =
      app.add_subcommand("convert", "convert between task granularities");
  convert_cmd->add_option("--from", *cv_from, "easqe or aste")->required();
  convert_cmd->add_option("--to", *cv_to, "aste or ope")->required();
  convert_cmd->add_option("--data", *cv_data, "input dataset")->required();
  convert_cmd->add_option("--out", *cv_out, "output dataset")->required();
  convert_cmd->add_flag("--legacy", *cv_legacy,
                        "read --from aste input in the legacy triplet format");
  convert_cmd->callback([cv_from, cv_to, cv_data, cv_out, cv_legacy]() {
    Dataset input;
    if (*cv_from == "easqe") {
      input = read_dataset(*cv_data, TaskKind::Easqe);
    } else if (*cv_from == "aste") {
      input = *cv_legacy ? read_legacy_aste(*cv_data)
                         : read_dataset(*cv_data, TaskKind::Aste);
    } else {
      throw CLI::ValidationError("--from", "unknown source task '" + *cv_from + "'");
    }
    Dataset output;
    if (*cv_to == "aste") {
      output = convert_easqe_to_aste(input);
    } else if (*cv_to == "ope") {
      output = input.task == TaskKind::Easqe
                   ? convert_aste_to_ope(convert_easqe_to_aste(input))
                   : convert_aste_to_ope(input);
    } else {
      throw CLI::ValidationError("--to", "unknown target task '" + *cv_to + "'");
    }
    write_dataset(output, *cv_out);
    std::cout << "converted " << output.records.size() << " sentence(s) ("
              << *cv_from << " -> " << *cv_to << ") -> " << *cv_out << "\n";
  });

  // ---- stats ----
  auto st_data = std::make_shared<std::string>();
  auto st_out = std::make_shared<std::string>();
  CLI::App* stats_cmd = app.add_subcommand("stats", "EASQE corpus statistics");
  stats_cmd->add_option("--data", *st_data, "EASQE dataset")->required();
  stats_cmd->add_option("--out", *st_out, "JSON report path");
  stats_cmd->callback([st_data, st_out]() {
    StatsReport report = dataset_stats(read_dataset(*st_data, TaskKind::Easqe));
    char pct[32];
    std::snprintf(pct, sizeof(pct), "%.2f", report.co_occurrence_pct);
    std::cout << "sentences: " << report.sentence_count << "\n"
              << "quads: " << report.quad_count << "\n"
              << "co_occurrence_pct: " << pct << "\n";
    write_json_out(*st_out, {{"sentences", report.sentence_count},
                             {"quads", report.quad_count},
                             {"co_occurrence_pct", report.co_occurrence_pct}});
  });

  // ---- diff ----
  auto df_new = std::make_shared<std::string>();
  auto df_old = std::make_shared<std::string>();
  auto df_old_task = std::make_shared<std::string>("easqe");
  auto df_legacy = std::make_shared<bool>(false);
  auto df_out = std::make_shared<std::string>();
  CLI::App* diff_cmd =
      app.add_subcommand("diff", "percentage of new annotations absent from old");
  diff_cmd->add_option("--new", *df_new, "new EASQE dataset")->required();
  diff_cmd->add_option("--old", *df_old, "old dataset")->required();
  diff_cmd->add_option("--old-task", *df_old_task, "easqe or aste");
  diff_cmd->add_flag("--legacy-old", *df_legacy,
                     "read --old in the legacy triplet format (implies aste)");
  diff_cmd->add_option("--out", *df_out, "JSON report path");
  diff_cmd->callback([df_new, df_old, df_old_task, df_legacy, df_out]() {
    Dataset new_set = read_dataset(*df_new, TaskKind::Easqe);
    Dataset old_set;
    if (*df_legacy) {
      old_set = read_legacy_aste(*df_old);
    } else if (*df_old_task == "easqe") {
      old_set = read_dataset(*df_old, TaskKind::Easqe);
    } else if (*df_old_task == "aste") {
      old_set = read_dataset(*df_old, TaskKind::Aste);
    } else {
      throw CLI::ValidationError("--old-task", "unknown task '" + *df_old_task + "'");
    }
    double pct = dataset_diff(new_set, old_set);
    char formatted[32];
    std::snprintf(formatted, sizeof(formatted), "%.2f", pct);
    std::cout << "supplement_pct: " << formatted << "\n";
    write_json_out(*df_out, {{"supplement_pct", pct}});
  });

  // ---- gradcheck ----
  auto gc_seed = std::make_shared<std::uint64_t>(default_seed());
  auto gc_stage = std::make_shared<int>(1);
  auto gc_mode = std::make_shared<std::string>("crf");
  auto gc_eps = std::make_shared<double>(1e-5);
  auto gc_tol = std::make_shared<double>(1e-4);
  auto gc_out = std::make_shared<std::string>();
  CLI::App* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "compare analytic gradients against central differences");
  gradcheck_cmd->add_option("--seed", *gc_seed, "fixture seed");
  gradcheck_cmd->add_option("--stage", *gc_stage, "tagging stage (1 or 2)")
      ->check(CLI::Range(1, 2));
  gradcheck_cmd->add_option("--mode", *gc_mode, "crf or softmax");
  gradcheck_cmd->add_option("--epsilon", *gc_eps, "finite-difference step");
  gradcheck_cmd->add_option("--tol", *gc_tol, "maximum accepted relative error");
  gradcheck_cmd->add_option("--out", *gc_out, "JSON report path");
  gradcheck_cmd->callback([gc_seed, gc_stage, gc_mode, gc_eps, gc_tol, gc_out,
                           &exit_code]() {
    GradcheckFixture fixture = make_gradcheck_fixture(
        *gc_seed, *gc_stage == 1 ? Stage::One : Stage::Two, parse_mode(*gc_mode));
    double err = gradient_check(fixture.model, fixture.instance, *gc_eps);
    bool ok = err < *gc_tol;
    std::cout << "max relative error: " << err << (ok ? " (ok)" : " (FAIL)")
              << "\n";
    write_json_out(*gc_out, {{"max_rel_error", err},
                             {"epsilon", *gc_eps},
                             {"tol", *gc_tol},
                             {"ok", ok}});
    if (!ok) exit_code = 2;
  });

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}

}  // namespace cli
}  // namespace easqe
