// Command-line front end: dataset generation, training, evaluation and the
// experiment protocols. Exit codes: 0 success, 1 failed validation, 3..8 by
// error category (see credfuse/error.hpp).

#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "credfuse/circuit_io.hpp"
#include "credfuse/error.hpp"
#include "credfuse/experiments.hpp"
#include "credfuse/inference.hpp"

namespace {

using namespace credfuse;

constexpr int kValidationFailed = 1;

struct GenOptions {
  std::string out;
  std::string preset = "none";
  SynthConfig synth;
  std::vector<double> fractions{0.6, 0.2, 0.2};
};

/// Shared by train and the experiment subcommands.
struct TrainOptions {
  std::string fusion = "cwm";
  std::size_t components = 8;
  std::string init = "random";
  std::size_t mlp_hidden = 64;
  double eta1 = 0.01;
  double eta2 = 0.01;
  std::size_t batch = 32;
  std::size_t iters = 1000;
  double likelihood_weight = 1.0;
  std::string optimizer = "adam";
  std::size_t patience = 0;
  bool block_evidence = false;
  bool freeze_predictors = false;
  std::string fit_split = "train";

  SystemConfig system(std::uint64_t seed) const {
    SystemConfig s;
    s.method = parse_method(fusion);
    s.components = components;
    s.mlp_hidden = mlp_hidden;
    s.seed = seed;
    if (init == "symmetric") s.init.scheme = InitConfig::Scheme::kSymmetric;
    else if (init != "random") throw UsageError("unknown --init '" + init + "' (expected random or symmetric)");
    return s;
  }

  TrainConfig train(std::uint64_t seed) const {
    TrainConfig t;
    t.eta1 = eta1;
    t.eta2 = eta2;
    t.batch_size = batch;
    t.t_max = iters;
    t.seed = seed;
    t.likelihood_weight = likelihood_weight;
    t.optimizer = parse_optimizer(optimizer);
    t.patience = patience;
    t.evidence_gradients = !block_evidence;
    t.train_predictors = !freeze_predictors;
    t.fit_split = parse_split(fit_split);
    return t;
  }
};

void add_train_flags(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--fusion", o.fusion, "dpc, cwm, wm, noisyor or mlp")->capture_default_str();
  cmd->add_option("--components", o.components, "mixture components of the circuit")->capture_default_str();
  cmd->add_option("--init", o.init, "circuit initialization: random or symmetric")->capture_default_str();
  cmd->add_option("--mlp-hidden", o.mlp_hidden, "hidden width of the MLP head")->capture_default_str();
  cmd->add_option("--eta1", o.eta1, "predictor learning rate")->capture_default_str();
  cmd->add_option("--eta2", o.eta2, "circuit and head learning rate")->capture_default_str();
  cmd->add_option("--batch", o.batch, "mini-batch size")->capture_default_str();
  cmd->add_option("--iters", o.iters, "training iterations")->capture_default_str();
  cmd->add_option("--likelihood-weight", o.likelihood_weight, "weight of the circuit log-likelihood term")
      ->capture_default_str();
  cmd->add_option("--optimizer", o.optimizer, "sgd or adam")->capture_default_str();
  cmd->add_option("--patience", o.patience, "early-stopping patience in epochs, 0 disables")->capture_default_str();
  cmd->add_flag("--block-evidence", o.block_evidence, "keep the fused loss out of the predictors");
  cmd->add_flag("--freeze-predictors", o.freeze_predictors, "train only the fusion parameters");
  cmd->add_option("--fit-split", o.fit_split, "split sampled for updates")->capture_default_str();
}

struct NoiseOptions {
  std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t modality = 2;
  std::size_t trials = 3;
  std::vector<double> alpha;

  NoiseProtocol protocol(std::uint64_t seed) const {
    NoiseProtocol p;
    p.lambdas = lambdas;
    p.noised_modality = modality;
    p.trials = trials;
    p.alpha = alpha;
    p.seed = seed;
    return p;
  }
};

void add_noise_flags(CLI::App* cmd, NoiseOptions& o) {
  cmd->add_option("--lambdas", o.lambdas, "noise weights, ascending")->delimiter(',')->capture_default_str();
  cmd->add_option("--modality", o.modality, "noised modality (1-based)")->capture_default_str();
  cmd->add_option("--trials", o.trials, "noise draws per lambda")->capture_default_str();
  cmd->add_option("--alpha", o.alpha, "Dirichlet noise concentration, default all ones")->delimiter(',');
}

void add_seed(CLI::App* cmd, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "random seed")->envname("CREDFUSE_SEED")->capture_default_str();
}

void print_json(const nlohmann::json& doc) { std::cout << doc.dump(2) << '\n'; }

int run_gen(GenOptions o, std::uint64_t seed) {
  SynthConfig cfg = o.synth;
  if (o.preset == "reference") cfg = reference_synth_config(seed);
  else if (o.preset == "high-noise") cfg = high_noise_synth_config(seed);
  else if (o.preset != "none") throw UsageError("unknown --preset '" + o.preset + "'");
  cfg.seed = seed;
  if (cfg.modality_noise.size() != cfg.num_modalities && cfg.modality_noise.size() == 1)
    cfg.modality_noise.assign(cfg.num_modalities, cfg.modality_noise.front());
  auto ds = generate_synthetic(cfg);
  if (o.fractions.size() != 3) throw UsageError("--split needs three fractions");
  split(ds, {o.fractions[0], o.fractions[1], o.fractions[2]}, derive_seed(seed, 2));
  save_dataset(ds, o.out);
  fmt::print(stderr, "wrote {} examples to {}\n", ds.examples.size(), o.out);
  return 0;
}

int run_train(const std::string& data, const std::string& out, const std::string& history_path,
              const TrainOptions& o, std::uint64_t seed) {
  const auto ds = load_dataset(data);
  FusionSystem system = make_system(ds, o.system(seed));
  const auto result = train(system, ds, o.train(seed));
  std::ofstream history_file;
  if (!history_path.empty()) {
    history_file.open(history_path);
    if (!history_file) throw IoError("cannot write " + history_path);
  }
  std::ostream& hist = history_path.empty() ? std::cout : history_file;
  for (const auto& r : result.history) hist << to_json(r).dump() << '\n';
  save_system(system, out);
  fmt::print(stderr, "trained {} for {} iterations; model written to {}\n", o.fusion, result.iterations, out);
  return 0;
}

int run_eval(const std::string& model, const std::string& data, const std::string& split_name_arg,
             const std::string& csv) {
  const auto system = load_system(model);
  const auto ds = load_dataset(data);
  const auto report = evaluate(system, ds, parse_split(split_name_arg));
  print_json(to_json(report));
  const std::vector<MetricsRow> rows{{std::string(method_name(system.method)), 1.0, 0, report}};
  if (!csv.empty()) write_metrics_csv(rows, csv);
  return 0;
}

int run_credibility(const std::string& model, const std::string& data, const std::string& split_name_arg,
                    const std::string& out) {
  const auto system = load_system(model);
  if (!system.circuit) throw ContractError("credibility needs a DPC or CWM model");
  const auto ds = load_dataset(data);
  const Split split = parse_split(split_name_arg);
  std::ofstream per_example;
  if (!out.empty()) {
    per_example.open(out);
    if (!per_example) throw IoError("cannot write " + out);
    for (std::size_t i : ds.indices(split)) {
      auto doc = to_json(credibility(*system.circuit, system.modality_predictions(ds.examples[i])));
      doc["index"] = i;
      per_example << doc.dump() << '\n';
    }
  }
  const auto summary = mean_relative_credibility(system, ds, split);
  print_json({{"split", split_name_arg}, {"mean_relative_credibility", summary.mean}, {"stderr", summary.standard_error}});
  return 0;
}

int run_sweep_noise(const std::string& data, const TrainOptions& o, const NoiseOptions& n, std::size_t predictor_iters,
                    std::size_t retrain_iters, bool retrain_all, const std::string& cred_out,
                    const std::string& metrics_out, std::uint64_t seed) {
  const auto ds = load_dataset(data);
  TrainConfig stage1 = o.train(derive_seed(seed, 10));
  stage1.t_max = predictor_iters;
  const auto pre = predict_modalities(ds, stage1);
  TrainConfig stage2 = o.train(derive_seed(seed, 11));
  const auto trained = fit_fusion(pre, o.system(seed), stage2);
  SweepOptions opts;
  opts.retrain = o.train(seed);
  opts.retrain.t_max = retrain_iters;
  opts.retrain_all = retrain_all;
  opts.fresh = o.system(seed);
  const auto result = run_noise_sweep(pre, trained, n.protocol(seed), opts);
  write_credibility_csv(result.credibility_rows, cred_out);
  if (!metrics_out.empty()) write_metrics_csv(result.metrics_rows, metrics_out);
  for (std::size_t i = 0; i < result.lambdas.size(); ++i)
    fmt::print(stderr, "lambda {:.3g}: noised-modality credibility {:.4f} +- {:.4f}\n", result.lambdas[i],
               result.mean_credibility[i][n.modality - 1], result.credibility_stderr[i][n.modality - 1]);
  return 0;
}

int run_sweep_epochs(const std::string& data, const TrainOptions& o, const NoiseOptions& n, const std::string& out,
                     std::uint64_t seed) {
  const auto ds = load_dataset(data);
  const auto traj = run_credibility_epochs(ds, o.system(seed), o.train(seed), n.protocol(seed));
  write_credibility_csv(trajectory_rows(traj), out);
  for (const auto& t : traj)
    fmt::print(stderr, "lambda {:.3g}: {} epochs, final noised-modality credibility {:.4f}\n", t.lambda,
               t.epochs.size() - 1, t.mean.back()[n.modality - 1]);
  return 0;
}

int run_robustness_cmd(const std::string& data, const TrainOptions& o, const NoiseOptions& n,
                       const std::vector<std::string>& methods, const std::string& out,
                       const std::string& declines_out, std::uint64_t seed) {
  const auto ds = load_dataset(data);
  std::vector<FusionSystem> systems;
  for (const auto& m : methods) {
    TrainOptions per = o;
    per.fusion = m;
    systems.push_back(fit_fusion(ds, per.system(seed), per.train(seed)));
  }
  const auto result = run_robustness(ds, systems, n.protocol(seed));
  write_metrics_csv(result.rows, out);
  if (!declines_out.empty()) write_declines_csv(result.declines, declines_out);
  for (const auto& d : result.declines)
    fmt::print(stderr, "{:8} lambda {:.3g}: F1 decline {:.4f} +- {:.4f}, AUROC decline {:.4f} +- {:.4f}\n", d.method,
               d.lambda, d.f1_decline, d.f1_stderr, d.auroc_decline, d.auroc_stderr);
  return 0;
}

int run_validate(const std::string& model, std::size_t dominance_grid) {
  const auto system = load_system(model);
  if (!system.circuit) throw ContractError("model '" + model + "' has no circuit to validate");
  const Circuit& c = *system.circuit;
  const auto smooth = validate_smooth(c);
  const auto decomposable = validate_decomposable(c);
  const auto root = validate_root_scope(c);
  const auto unbounded = unbounded_leaves(c);
  nlohmann::json doc{{"smooth", smooth.ok()},
                     {"decomposable", decomposable.ok()},
                     {"root_scope", root.ok()},
                     {"leaf_bounds", unbounded.empty()},
                     {"non_smooth_nodes", smooth.offending},
                     {"non_decomposable_nodes", decomposable.offending},
                     {"unbounded_leaves", unbounded}};
  bool ok = smooth.ok() && decomposable.ok() && root.ok();
  if (dominance_grid > 0) {
    const auto violations = check_marginal_dominance(c, dominance_grid);
    doc["dominance_violations"] = violations.size();
    // Dominance is only guaranteed when every leaf density is bounded by one.
    if (unbounded.empty()) ok = ok && violations.empty();
  }
  print_json(doc);
  return ok ? 0 : kValidationFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Credibility-aware late fusion with probabilistic circuits"};
  app.set_config("--config", "", "TOML file with flag values; command-line flags take precedence");
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::function<int()> action;

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "dataset file (JSON lines)")->required();
  gen_cmd->add_option("--preset", gen.preset, "none, reference or high-noise")->capture_default_str();
  gen_cmd->add_option("--classes", gen.synth.num_classes, "K")->capture_default_str();
  gen_cmd->add_option("--modalities", gen.synth.num_modalities, "M")->capture_default_str();
  gen_cmd->add_option("--examples", gen.synth.num_examples, "N")->capture_default_str();
  gen_cmd->add_option("--separation", gen.synth.class_separation, "radius of the class means")->capture_default_str();
  gen_cmd->add_option("--noise", gen.synth.modality_noise, "feature noise per modality")->delimiter(',');
  gen_cmd->add_option("--dims", gen.synth.dims, "feature dimension per modality")->delimiter(',');
  gen_cmd->add_option("--split", gen.fractions, "train,val,test fractions")->delimiter(',')->capture_default_str();
  add_seed(gen_cmd, seed);
  gen_cmd->callback([&] { action = [&] { return run_gen(gen, seed); }; });

  std::string data, out, model, split_arg = "test", csv, history;
  TrainOptions topt;
  auto* train_cmd = app.add_subcommand("train", "train a fusion system");
  train_cmd->add_option("--data", data, "dataset file")->required();
  train_cmd->add_option("--out", out, "model file")->required();
  train_cmd->add_option("--history", history, "write history records here instead of stdout");
  add_train_flags(train_cmd, topt);
  add_seed(train_cmd, seed);
  train_cmd->callback([&] { action = [&] { return run_train(data, out, history, topt, seed); }; });

  auto* eval_cmd = app.add_subcommand("eval", "metrics of a trained model on one split");
  eval_cmd->add_option("--model", model, "model file")->required();
  eval_cmd->add_option("--data", data, "dataset file")->required();
  eval_cmd->add_option("--split", split_arg, "train, val or test")->capture_default_str();
  eval_cmd->add_option("--csv", csv, "also write the metrics as a CSV table");
  eval_cmd->callback([&] { action = [&] { return run_eval(model, data, split_arg, csv); }; });

  auto* cred_cmd = app.add_subcommand("credibility", "credibility reports of a DPC/CWM model");
  cred_cmd->add_option("--model", model, "model file")->required();
  cred_cmd->add_option("--data", data, "dataset file")->required();
  cred_cmd->add_option("--split", split_arg, "train, val or test")->capture_default_str();
  cred_cmd->add_option("--out", out, "per-example reports (JSON lines)");
  cred_cmd->callback([&] { action = [&] { return run_credibility(model, data, split_arg, out); }; });

  NoiseOptions nopt;
  std::size_t predictor_iters = 1000, retrain_iters = 500;
  bool retrain_all = false;
  std::string metrics_out, declines_out;
  TrainOptions sweep_opt;
  sweep_opt.fit_split = "val";
  sweep_opt.eta2 = 0.05;
  auto* sweep_cmd = app.add_subcommand("sweep-noise", "credibility against the noise weight lambda");
  sweep_cmd->add_option("--data", data, "dataset file with features")->required();
  sweep_cmd->add_option("--out", out, "credibility CSV")->required();
  sweep_cmd->add_option("--metrics-out", metrics_out, "metrics CSV");
  sweep_cmd->add_option("--predictor-iters", predictor_iters, "iterations for the unimodal predictors")
      ->capture_default_str();
  sweep_cmd->add_option("--retrain-iters", retrain_iters, "circuit refit iterations per point")->capture_default_str();
  sweep_cmd->add_flag("--retrain-all", retrain_all, "refit a freshly initialized circuit at every point");
  add_train_flags(sweep_cmd, sweep_opt);
  add_noise_flags(sweep_cmd, nopt);
  add_seed(sweep_cmd, seed);
  sweep_cmd->callback([&] {
    action = [&] {
      return run_sweep_noise(data, sweep_opt, nopt, predictor_iters, retrain_iters, retrain_all, out, metrics_out, seed);
    };
  });

  TrainOptions epochs_opt;
  epochs_opt.init = "symmetric";
  epochs_opt.iters = 380;
  NoiseOptions epochs_noise;
  epochs_noise.lambdas = {0.2, 1.0};
  auto* epochs_cmd = app.add_subcommand("sweep-epochs", "validation credibility after every epoch");
  epochs_cmd->add_option("--data", data, "dataset file")->required();
  epochs_cmd->add_option("--out", out, "credibility CSV")->required();
  add_train_flags(epochs_cmd, epochs_opt);
  add_noise_flags(epochs_cmd, epochs_noise);
  add_seed(epochs_cmd, seed);
  epochs_cmd->callback([&] { action = [&] { return run_sweep_epochs(data, epochs_opt, epochs_noise, out, seed); }; });

  TrainOptions robust_opt;
  NoiseOptions robust_noise;
  robust_noise.lambdas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  robust_noise.modality = 1;
  std::vector<std::string> methods{"dpc", "cwm", "wm", "noisyor", "mlp"};
  auto* robust_cmd = app.add_subcommand("robustness", "metric decline of each method under noise");
  robust_cmd->add_option("--data", data, "dataset file")->required();
  robust_cmd->add_option("--out", out, "metrics CSV")->required();
  robust_cmd->add_option("--declines-out", declines_out, "decline CSV");
  robust_cmd->add_option("--methods", methods, "fusion methods to compare")->delimiter(',')->capture_default_str();
  add_train_flags(robust_cmd, robust_opt);
  add_noise_flags(robust_cmd, robust_noise);
  add_seed(robust_cmd, seed);
  robust_cmd->callback([&] {
    action = [&] { return run_robustness_cmd(data, robust_opt, robust_noise, methods, out, declines_out, seed); };
  });

  std::size_t dominance_grid = 0;
  auto* validate_cmd = app.add_subcommand("validate", "structural checks of a model's circuit");
  validate_cmd->add_option("--model", model, "model file")->required();
  validate_cmd->add_option("--dominance-grid", dominance_grid, "also run the brute-force marginal check at this resolution");
  validate_cmd->callback([&] { action = [&] { return run_validate(model, dominance_grid); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(Error::Category::kUsage);
  }
  try {
    return action();
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return static_cast<int>(Error::Category::kIo);
  }
}
