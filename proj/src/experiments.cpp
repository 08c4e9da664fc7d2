#include "credfuse/experiments.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "credfuse/error.hpp"

namespace credfuse {

namespace {

std::vector<double> noise_alpha(std::span<const double> alpha, std::size_t k) {
  if (alpha.empty()) return std::vector<double>(k, 1.0);
  return {alpha.begin(), alpha.end()};
}

void check_protocol(const NoiseProtocol& protocol, const MultimodalDataset& ds) {
  if (protocol.lambdas.empty()) throw ContractError("lambda grid is empty");
  if (!std::is_sorted(protocol.lambdas.begin(), protocol.lambdas.end()))
    throw ContractError("lambda grid must be sorted ascending");
  for (double l : protocol.lambdas)
    if (!(l >= 0.0 && l <= 1.0)) throw ContractError("lambda grid must lie in [0, 1]");
  if (protocol.noised_modality < 1 || protocol.noised_modality > ds.num_modalities)
    throw ContractError("noised modality must be in 1.." + std::to_string(ds.num_modalities));
  if (protocol.trials == 0) throw ContractError("need at least one trial");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stderr_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

std::string fmt_real(double x) { return fmt::format("{:.17g}", x); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_real(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(fmt::format("{}:{}: '{}' is not a number", path.string(), line, s));
  }
}

std::size_t parse_count(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  const double v = parse_real(s, path, line);
  if (v < 0 || v != std::floor(v)) throw FormatError(fmt::format("{}:{}: '{}' is not a count", path.string(), line, s));
  return static_cast<std::size_t>(v);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

}  // namespace

MultimodalDataset predict_modalities(const MultimodalDataset& dataset, const TrainConfig& config) {
  SystemConfig sc;
  sc.method = FusionMethod::kNoisyOr;
  sc.seed = config.seed;
  FusionSystem system = make_system(dataset, sc);
  TrainConfig tc = config;
  tc.evidence_gradients = false;
  tc.train_predictors = true;
  tc.classification_terms = true;
  tc.track_validation = false;
  tc.patience = 0;
  if (std::any_of(system.predictors.begin(), system.predictors.end(), [](const auto& p) { return p.has_value(); }))
    train(system, dataset, tc);
  return precompute_predictions(system, dataset);
}

MultimodalDataset with_prediction_noise(const MultimodalDataset& dataset, std::size_t modality, double lambda,
                                        std::span<const double> alpha, std::uint64_t seed,
                                        std::span<const Split> splits) {
  MultimodalDataset out = dataset;
  attach_noise(out, modality, lambda, noise_alpha(alpha, dataset.num_classes), seed, splits);
  return out;
}

FusionSystem fit_fusion(const MultimodalDataset& dataset, const SystemConfig& system, const TrainConfig& config) {
  FusionSystem s = make_system(dataset, system);
  train(s, dataset, config);
  return s;
}

SweepResult run_noise_sweep(const MultimodalDataset& dataset, const FusionSystem& trained,
                            const NoiseProtocol& protocol, const SweepOptions& options) {
  check_protocol(protocol, dataset);
  if (!trained.circuit) throw ContractError("the noise sweep needs a DPC or CWM system");
  const std::size_t m = dataset.num_modalities;
  const Split test[] = {Split::kTest};
  SweepResult result;
  result.lambdas = protocol.lambdas;
  for (double lambda : protocol.lambdas) {
    std::vector<std::vector<double>> means(m), errors(m);
    for (std::size_t t = 0; t < protocol.trials; ++t) {
      const std::uint64_t trial_seed = derive_seed(protocol.seed, t);
      try {
        const auto noisy = with_prediction_noise(dataset, protocol.noised_modality, lambda, protocol.alpha,
                                                 derive_seed(trial_seed, 0), test);
        FusionSystem system = trained;
        if (options.retrain_all) {
          SystemConfig fresh = options.fresh;
          fresh.method = trained.method;
          fresh.seed = derive_seed(trial_seed, 2);
          system = make_system(noisy, fresh);
          system.predictors = trained.predictors;
        }
        TrainConfig tc = options.retrain;
        tc.seed = derive_seed(trial_seed, 1);
        tc.fit_split = Split::kTest;
        tc.train_predictors = false;
        tc.track_validation = false;
        tc.patience = 0;
        train(system, noisy, tc);
        const auto summary = mean_relative_credibility(system, noisy, Split::kTest);
        for (std::size_t j = 0; j < m; ++j) {
          means[j].push_back(summary.mean[j]);
          errors[j].push_back(summary.standard_error[j]);
        }
        result.metrics_rows.push_back(
            {std::string(method_name(system.method)), lambda, t, evaluate(system, noisy, Split::kTest)});
      } catch (const Error& e) {
        throw NumericError(fmt::format("lambda = {}, trial {}: {}", lambda, t, e.what()));
      }
    }
    std::vector<double> row_mean(m), row_err(m);
    for (std::size_t j = 0; j < m; ++j) {
      row_mean[j] = mean_of(means[j]);
      double ss = 0.0;
      for (double e : errors[j]) ss += e * e;
      row_err[j] = std::sqrt(ss) / static_cast<double>(protocol.trials);
      result.credibility_rows.push_back({lambda, std::nullopt, j + 1, row_mean[j], row_err[j]});
    }
    result.mean_credibility.push_back(std::move(row_mean));
    result.credibility_stderr.push_back(std::move(row_err));
  }
  return result;
}

std::vector<EpochTrajectory> run_credibility_epochs(const MultimodalDataset& dataset, const SystemConfig& system,
                                                    const TrainConfig& config, const NoiseProtocol& protocol) {
  check_protocol(protocol, dataset);
  if (!uses_circuit(system.method)) throw ContractError("credibility trajectories need a DPC or CWM system");
  const Split all[] = {Split::kUnassigned, Split::kTrain, Split::kVal, Split::kTest};
  std::vector<EpochTrajectory> out;
  for (double lambda : protocol.lambdas) {
    const auto noisy = with_prediction_noise(dataset, protocol.noised_modality, lambda, protocol.alpha,
                                             derive_seed(protocol.seed, 0), all);
    FusionSystem s = make_system(noisy, system);
    TrainConfig tc = config;
    tc.record_initial = true;
    tc.track_validation = true;
    tc.patience = 0;
    TrainResult run;
    try {
      run = train(s, noisy, tc);
    } catch (const Error& e) {
      throw NumericError(fmt::format("lambda = {}: {}", lambda, e.what()));
    }
    EpochTrajectory traj;
    traj.lambda = lambda;
    for (const auto& r : run.history) {
      if (r.mean_credibility.empty()) throw ContractError("credibility trajectories need a nonempty val split");
      traj.epochs.push_back(r.epoch);
      traj.mean.push_back(r.mean_credibility);
      traj.standard_error.push_back(r.credibility_stderr);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<CredibilityRow> trajectory_rows(std::span<const EpochTrajectory> trajectories) {
  std::vector<CredibilityRow> rows;
  for (const auto& t : trajectories)
    for (std::size_t e = 0; e < t.epochs.size(); ++e)
      for (std::size_t j = 0; j < t.mean[e].size(); ++j)
        rows.push_back({t.lambda, t.epochs[e], j + 1, t.mean[e][j], t.standard_error[e][j]});
  return rows;
}

RobustnessResult run_robustness(const MultimodalDataset& dataset, std::span<const FusionSystem> systems,
                                const NoiseProtocol& protocol) {
  check_protocol(protocol, dataset);
  const Split test[] = {Split::kTest};
  RobustnessResult result;
  for (const auto& system : systems) {
    const std::string name(method_name(system.method));
    const auto clean = evaluate(system, dataset, Split::kTest);
    for (double lambda : protocol.lambdas) {
      std::vector<double> f1, auroc;
      for (std::size_t t = 0; t < protocol.trials; ++t) {
        const auto noisy = with_prediction_noise(dataset, protocol.noised_modality, lambda, protocol.alpha,
                                                 derive_seed(protocol.seed, t), test);
        const auto report = evaluate(system, noisy, Split::kTest);
        result.rows.push_back({name, lambda, t, report});
        f1.push_back(clean.macro_f1 - report.macro_f1);
        auroc.push_back(clean.macro_auroc - report.macro_auroc);
      }
      result.declines.push_back({name, lambda, mean_of(f1), stderr_of(f1), mean_of(auroc), stderr_of(auroc)});
    }
  }
  return result;
}

// --- CSV --------------------------------------------------------------------------

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,lambda,trial,accuracy,precision,recall,f1,auroc\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << fmt::format("{},{},{},{},{},{},{},{}\n", r.method, fmt_real(r.lambda), r.trial, fmt_real(m.accuracy),
                       fmt_real(m.macro_precision), fmt_real(m.macro_recall), fmt_real(m.macro_f1),
                       fmt_real(m.macro_auroc));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  if (line != "method,lambda,trial,accuracy,precision,recall,f1,auroc")
    throw FormatError(path.string() + ":1: unexpected metrics header");
  std::vector<MetricsRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    const auto c = split_csv_line(line);
    if (c.size() != 8) throw FormatError(fmt::format("{}:{}: expected 8 columns", path.string(), n));
    MetricsRow r;
    r.method = c[0];
    r.lambda = parse_real(c[1], path, n);
    r.trial = parse_count(c[2], path, n);
    r.metrics = {parse_real(c[3], path, n), parse_real(c[4], path, n), parse_real(c[5], path, n),
                 parse_real(c[6], path, n), parse_real(c[7], path, n)};
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_credibility_csv(std::span<const CredibilityRow> rows, const std::filesystem::path& path) {
  const bool epochs = !rows.empty() && rows.front().epoch.has_value();
  for (const auto& r : rows)
    if (r.epoch.has_value() != epochs) throw ContractError("credibility rows mix epoch and non-epoch entries");
  auto out = open_out(path);
  out << (epochs ? "lambda,epoch,modality,mean_relative_credibility,stderr\n"
                 : "lambda,modality,mean_relative_credibility,stderr\n");
  for (const auto& r : rows) {
    out << fmt_real(r.lambda) << ',';
    if (epochs) out << *r.epoch << ',';
    out << fmt::format("{},{},{}\n", r.modality, fmt_real(r.mean), fmt_real(r.standard_error));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<CredibilityRow> read_credibility_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  bool epochs = false;
  if (line == "lambda,epoch,modality,mean_relative_credibility,stderr") epochs = true;
  else if (line != "lambda,modality,mean_relative_credibility,stderr")
    throw FormatError(path.string() + ":1: unexpected credibility header");
  std::vector<CredibilityRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    const auto c = split_csv_line(line);
    if (c.size() != (epochs ? 5u : 4u)) throw FormatError(fmt::format("{}:{}: wrong column count", path.string(), n));
    CredibilityRow r;
    std::size_t i = 0;
    r.lambda = parse_real(c[i++], path, n);
    if (epochs) r.epoch = parse_count(c[i++], path, n);
    r.modality = parse_count(c[i++], path, n);
    r.mean = parse_real(c[i++], path, n);
    r.standard_error = parse_real(c[i++], path, n);
    rows.push_back(r);
  }
  return rows;
}

void write_declines_csv(std::span<const DeclineRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,lambda,f1_decline,f1_stderr,auroc_decline,auroc_stderr\n";
  for (const auto& r : rows)
    out << fmt::format("{},{},{},{},{},{}\n", r.method, fmt_real(r.lambda), fmt_real(r.f1_decline),
                       fmt_real(r.f1_stderr), fmt_real(r.auroc_decline), fmt_real(r.auroc_stderr));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace credfuse
