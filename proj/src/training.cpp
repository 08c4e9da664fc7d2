#include "credfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "credfuse/circuit_io.hpp"
#include "credfuse/error.hpp"
#include "credfuse/kernels.hpp"
#include "credfuse/numeric.hpp"

namespace credfuse {

using nlohmann::json;

// --- predictors ---------------------------------------------------------------------

LinearSoftmax LinearSoftmax::zeros(std::size_t input, std::size_t classes) {
  LinearSoftmax p;
  p.input = input;
  p.classes = classes;
  p.weights.assign(input * classes, 0.0);
  p.bias.assign(classes, 0.0);
  return p;
}

ProbVector predictor_forward(const LinearSoftmax& predictor, std::span<const double> x) {
  if (x.size() != predictor.input)
    throw ContractError("predictor expects " + std::to_string(predictor.input) + " features, got " +
                        std::to_string(x.size()));
  std::vector<double> z(predictor.classes);
  const std::span<const double> w(predictor.weights);
  for (std::size_t c = 0; c < z.size(); ++c) z[c] = kernels::dot(w.subspan(c * x.size(), x.size()), x) + predictor.bias[c];
  return ProbVector::unchecked(softmax(z));
}

void predictor_backward(const LinearSoftmax& predictor, std::span<const double> x, std::span<const double> upstream,
                        LinearSoftmax& grads) {
  const auto p = predictor_forward(predictor, x);
  const double mean = kernels::dot(p.values(), upstream);
  const std::span<double> gw(grads.weights);
  for (std::size_t c = 0; c < predictor.classes; ++c) {
    const double dz = p[c] * (upstream[c] - mean);
    if (dz == 0.0) continue;
    kernels::axpy(dz, x, gw.subspan(c * x.size(), x.size()));
    grads.bias[c] += dz;
  }
}

CrossEntropy cross_entropy(const ProbVector& p, std::size_t y) {
  if (y >= p.size()) throw ContractError("class index out of range");
  constexpr double kFloor = 1e-12;
  const double py = std::max(p[y], kFloor);
  CrossEntropy ce;
  ce.loss = -std::log(py);
  ce.grad.assign(p.size(), 0.0);
  ce.grad[y] = -1.0 / py;
  return ce;
}

// --- methods and systems -----------------------------------------------------------------

std::string_view method_name(FusionMethod method) {
  switch (method) {
    case FusionMethod::kDpc: return "dpc";
    case FusionMethod::kCwm: return "cwm";
    case FusionMethod::kWeightedMean: return "wm";
    case FusionMethod::kNoisyOr: return "noisyor";
    case FusionMethod::kMlp: return "mlp";
  }
  return "?";
}

FusionMethod parse_method(std::string_view name) {
  for (auto m : {FusionMethod::kDpc, FusionMethod::kCwm, FusionMethod::kWeightedMean, FusionMethod::kNoisyOr,
                 FusionMethod::kMlp})
    if (method_name(m) == name) return m;
  throw UsageError("unknown fusion method '" + std::string(name) + "' (expected dpc, cwm, wm, noisyor or mlp)");
}

bool uses_circuit(FusionMethod method) { return method == FusionMethod::kDpc || method == FusionMethod::kCwm; }

std::vector<ProbVector> FusionSystem::modality_predictions(const Example& example) const {
  if (example.modalities.size() != num_modalities) throw ContractError("example has the wrong number of modalities");
  std::vector<ProbVector> preds;
  preds.reserve(num_modalities);
  for (std::size_t j = 0; j < num_modalities; ++j) {
    if (const auto* p = std::get_if<ProbVector>(&example.modalities[j])) {
      preds.push_back(*p);
    } else {
      if (!predictors[j]) throw ContractError("modality " + std::to_string(j + 1) + " has features but no predictor");
      preds.push_back(predictor_forward(*predictors[j], std::get<FeatureVector>(example.modalities[j])));
    }
    if (!example.noise.empty() && example.noise.at(j)) preds.back() = apply_overlay(preds.back(), *example.noise[j]);
  }
  return preds;
}

ProbVector FusionSystem::fuse(std::span<const ProbVector> preds) const {
  switch (method) {
    case FusionMethod::kDpc: return fuse_dpc(*circuit, preds);
    case FusionMethod::kCwm: return fuse_cwm(*circuit, preds);
    case FusionMethod::kWeightedMean: return baseline_weighted_mean(wm_logits, preds);
    case FusionMethod::kNoisyOr: return baseline_noisy_or(preds);
    case FusionMethod::kMlp: return baseline_mlp(mlp, preds);
  }
  throw ContractError("unknown fusion method");
}

ProbVector FusionSystem::predict(const Example& example) const { return fuse(modality_predictions(example)); }

FusionSystem make_system(const MultimodalDataset& dataset, const SystemConfig& config) {
  dataset.validate();
  FusionSystem s;
  s.method = config.method;
  s.num_classes = dataset.num_classes;
  s.num_modalities = dataset.num_modalities;
  for (std::size_t j = 0; j < dataset.num_modalities; ++j) {
    if (dataset.kinds[j] == ModalityKind::kFeatures) s.predictors.emplace_back(LinearSoftmax::zeros(dataset.dims[j], dataset.num_classes));
    else s.predictors.emplace_back(std::nullopt);
  }
  switch (config.method) {
    case FusionMethod::kDpc:
    case FusionMethod::kCwm:
      s.circuit = build_fusion_circuit(dataset.num_modalities, dataset.num_classes, config.components, config.seed,
                                       config.init);
      break;
    case FusionMethod::kWeightedMean: s.wm_logits.assign(dataset.num_modalities, 0.0); break;
    case FusionMethod::kMlp:
      s.mlp = MlpParams::random(dataset.num_modalities * dataset.num_classes, dataset.num_classes, config.seed,
                                config.mlp_hidden);
      break;
    case FusionMethod::kNoisyOr: break;
  }
  return s;
}

json system_to_json(const FusionSystem& s) {
  json doc = s.circuit ? circuit_to_json(*s.circuit)
                       : json{{"schema_version", kModelSchemaVersion}, {"K", s.num_classes}, {"M", s.num_modalities}};
  doc["fusion"] = method_name(s.method);
  json preds = json::array();
  for (const auto& p : s.predictors) {
    if (p) preds.push_back({{"input", p->input}, {"classes", p->classes}, {"weights", p->weights}, {"bias", p->bias}});
    else preds.push_back(nullptr);
  }
  doc["predictors"] = std::move(preds);
  json head = json::object();
  if (s.method == FusionMethod::kWeightedMean) head["wm_logits"] = s.wm_logits;
  if (s.method == FusionMethod::kMlp) head["mlp"] = to_json(s.mlp);
  doc["head"] = std::move(head);
  return doc;
}

FusionSystem system_from_json(const json& doc) {
  try {
    FusionSystem s;
    s.method = parse_method(doc.at("fusion").get<std::string>());
    if (doc.at("schema_version").get<int>() != kModelSchemaVersion) throw FormatError("unsupported model schema_version");
    s.num_classes = doc.at("K").get<std::size_t>();
    s.num_modalities = doc.at("M").get<std::size_t>();
    if (uses_circuit(s.method)) s.circuit = circuit_from_json(doc);
    const auto& preds = doc.at("predictors");
    if (preds.size() != s.num_modalities) throw FormatError("model needs one predictor entry per modality");
    for (const auto& p : preds) {
      if (p.is_null()) {
        s.predictors.emplace_back(std::nullopt);
        continue;
      }
      LinearSoftmax ls = LinearSoftmax::zeros(p.at("input").get<std::size_t>(), p.at("classes").get<std::size_t>());
      auto w = p.at("weights").get<std::vector<double>>();
      auto b = p.at("bias").get<std::vector<double>>();
      if (w.size() != ls.weights.size() || b.size() != ls.bias.size() || ls.classes != s.num_classes)
        throw FormatError("predictor tensor sizes do not match");
      ls.weights = std::move(w);
      ls.bias = std::move(b);
      s.predictors.emplace_back(std::move(ls));
    }
    const auto& head = doc.at("head");
    if (s.method == FusionMethod::kWeightedMean) {
      s.wm_logits = head.at("wm_logits").get<std::vector<double>>();
      if (s.wm_logits.size() != s.num_modalities) throw FormatError("weighted-mean head needs M logits");
    }
    if (s.method == FusionMethod::kMlp) s.mlp = mlp_from_json(head.at("mlp"));
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model document: ") + e.what());
  } catch (const UsageError& e) {
    throw FormatError(e.what());
  }
}

void save_system(const FusionSystem& system, const std::filesystem::path& path) {
  write_json_file(system_to_json(system), path);
}

FusionSystem load_system(const std::filesystem::path& path) { return system_from_json(read_json_file(path)); }

MultimodalDataset precompute_predictions(const FusionSystem& system, const MultimodalDataset& dataset) {
  MultimodalDataset out = dataset;
  out.kinds.assign(dataset.num_modalities, ModalityKind::kProbs);
  out.dims.assign(dataset.num_modalities, dataset.num_classes);
  for (auto& ex : out.examples) {
    auto noise = std::move(ex.noise);
    ex.noise.clear();
    auto preds = system.modality_predictions(ex);
    for (std::size_t j = 0; j < preds.size(); ++j) ex.modalities[j] = std::move(preds[j]);
    ex.noise = std::move(noise);
  }
  return out;
}

// --- gradients ------------------------------------------------------------------------

double alpha_from_raw(double raw) { return softplus(raw) + kAlphaFloor; }
double raw_from_alpha(double alpha) { return softplus_inverse(alpha - kAlphaFloor); }

ParamGradients ParamGradients::zeros_like(const FusionSystem& system) {
  ParamGradients g;
  if (system.circuit) g.circuit = CircuitGradients::zeros_like(*system.circuit);
  for (const auto& p : system.predictors) g.predictors.push_back(p ? LinearSoftmax::zeros(p->input, p->classes) : LinearSoftmax{});
  g.wm_logits.assign(system.wm_logits.size(), 0.0);
  if (system.mlp.input > 0) g.mlp = MlpParams::zeros(system.mlp.input, system.mlp.output, system.mlp.hidden);
  return g;
}

void pc_backward(const Circuit& circuit, const Evidence& evidence, double upstream, CircuitGradients* params,
                 EvidenceGradients* evidence_grads) {
  backward(circuit, forward(circuit, evidence), upstream, params, evidence_grads);
}

namespace {

/// dalpha/draw at alpha = softplus(raw) + floor, i.e. sigmoid(raw).
double alpha_raw_slope(double alpha) { return -std::expm1(-(alpha - kAlphaFloor)); }

void to_raw_alpha(const Circuit& circuit, CircuitGradients& grads) {
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const auto* leaf = std::get_if<LeafNode>(&circuit.node(id));
    if (leaf == nullptr || leaf->var.is_target()) continue;
    const auto alpha = std::get<DirichletLeaf>(leaf->dist).alpha();
    for (std::size_t k = 0; k < alpha.size(); ++k) grads.node[id][k] *= alpha_raw_slope(alpha[k]);
  }
}

void fused_backward(const FusionSystem& s, std::span<const ProbVector> preds, std::span<const double> upstream,
                    ParamGradients& grads, EvidenceGradients* ev) {
  switch (s.method) {
    case FusionMethod::kDpc: fuse_dpc_backward(*s.circuit, preds, upstream, &grads.circuit, ev); break;
    case FusionMethod::kCwm: fuse_cwm_backward(*s.circuit, preds, upstream, &grads.circuit, ev); break;
    case FusionMethod::kWeightedMean: baseline_weighted_mean_backward(s.wm_logits, preds, upstream, grads.wm_logits, ev); break;
    case FusionMethod::kNoisyOr: baseline_noisy_or_backward(preds, upstream, ev); break;
    case FusionMethod::kMlp: baseline_mlp_backward(s.mlp, preds, upstream, &grads.mlp, ev); break;
  }
}

}  // namespace

LossResult loss_and_grads(const FusionSystem& system, const MultimodalDataset& dataset,
                          std::span<const std::size_t> batch, const LossOptions& options) {
  if (batch.empty()) throw ContractError("loss needs a nonempty batch");
  const std::size_t m = system.num_modalities;
  const std::size_t k = system.num_classes;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossResult res;
  res.grads = ParamGradients::zeros_like(system);
  res.unimodal_losses.assign(m, 0.0);
  double log_lik = 0.0;

  for (std::size_t idx : batch) {
    const Example& ex = dataset.examples.at(idx);
    try {
      const auto preds = system.modality_predictions(ex);
      const auto fused = system.fuse(preds);
      const auto ce = cross_entropy(fused, ex.label);
      res.joint_loss += ce.loss * inv_b;
      EvidenceGradients dpreds(m, std::vector<double>(k, 0.0));
      std::vector<CrossEntropy> unimodal(m);
      for (std::size_t j = 0; j < m; ++j) {
        if (!system.predictors[j]) continue;
        unimodal[j] = cross_entropy(preds[j], ex.label);
        res.unimodal_losses[j] += unimodal[j].loss * inv_b;
      }
      if (options.classification_terms) {
        std::vector<double> upstream(ce.grad);
        for (double& g : upstream) g *= inv_b;
        fused_backward(system, preds, upstream, res.grads, options.evidence_gradients ? &dpreds : nullptr);
        for (std::size_t j = 0; j < m; ++j) {
          if (!system.predictors[j]) continue;
          kernels::axpy(inv_b, unimodal[j].grad, dpreds[j]);
          if (!ex.noise.empty() && ex.noise[j])
            for (double& g : dpreds[j]) g *= ex.noise[j]->lambda;
          predictor_backward(*system.predictors[j], std::get<FeatureVector>(ex.modalities[j]), dpreds[j],
                             res.grads.predictors[j]);
        }
      }
      if (system.circuit && (options.likelihood_weight > 0.0 || uses_circuit(system.method))) {
        const auto cache = forward(*system.circuit, Evidence::full(ex.label, preds));
        log_lik += cache.root_value();
        if (options.likelihood_weight > 0.0)
          backward(*system.circuit, cache, -options.likelihood_weight, &res.grads.circuit, nullptr);
      }
    } catch (const Error& e) {
      throw NumericError("example " + std::to_string(idx) + ": " + e.what());
    }
  }
  res.loss = res.joint_loss + std::accumulate(res.unimodal_losses.begin(), res.unimodal_losses.end(), 0.0);
  res.mean_log_likelihood = log_lik * inv_b;
  res.objective = (options.classification_terms ? res.loss : 0.0) - options.likelihood_weight * log_lik;
  if (system.circuit) to_raw_alpha(*system.circuit, res.grads.circuit);
  return res;
}

double finite_difference_check(const std::function<double(std::span<const double>)>& fn, std::span<const double> point,
                               std::span<const double> analytic, double h) {
  if (point.size() != analytic.size()) throw ContractError("gradient and point differ in size");
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = fn(x);
    x[i] = orig - h;
    const double down = fn(x);
    x[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

// --- flat parameter view -----------------------------------------------------------------

namespace {

enum class BlockKind { kSum, kCategorical, kDirichlet, kPredictorWeights, kPredictorBias, kWm, kMlp };

struct Block {
  BlockKind kind;
  std::size_t index;  // node id, modality, or MLP tensor
  std::size_t offset;
  std::size_t size;
};

std::vector<double>* mlp_tensor(MlpParams& p, std::size_t i) {
  std::vector<double>* tensors[] = {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3};
  return tensors[i];
}

const std::vector<double>* mlp_tensor(const MlpParams& p, std::size_t i) {
  return mlp_tensor(const_cast<MlpParams&>(p), i);
}

std::vector<Block> layout(const FusionSystem& s) {
  std::vector<Block> blocks;
  std::size_t offset = 0;
  auto add = [&](BlockKind kind, std::size_t index, std::size_t size) {
    blocks.push_back({kind, index, offset, size});
    offset += size;
  };
  if (s.circuit) {
    for (NodeId id = 0; id < s.circuit->size(); ++id) {
      const Node& node = s.circuit->node(id);
      if (const auto* sum = std::get_if<SumNode>(&node)) add(BlockKind::kSum, id, sum->weight_logits.size());
      else if (const auto* leaf = std::get_if<LeafNode>(&node))
        add(leaf->var.is_target() ? BlockKind::kCategorical : BlockKind::kDirichlet, id, s.num_classes);
    }
  }
  for (std::size_t j = 0; j < s.predictors.size(); ++j) {
    if (!s.predictors[j]) continue;
    add(BlockKind::kPredictorWeights, j, s.predictors[j]->weights.size());
    add(BlockKind::kPredictorBias, j, s.predictors[j]->bias.size());
  }
  if (!s.wm_logits.empty()) add(BlockKind::kWm, 0, s.wm_logits.size());
  for (std::size_t i = 0; i < 6; ++i)
    if (!mlp_tensor(s.mlp, i)->empty()) add(BlockKind::kMlp, i, mlp_tensor(s.mlp, i)->size());
  return blocks;
}

}  // namespace

std::vector<double> get_parameters(const FusionSystem& s) {
  std::vector<double> x;
  for (const Block& b : layout(s)) {
    switch (b.kind) {
      case BlockKind::kSum: {
        const auto& w = std::get<SumNode>(s.circuit->node(b.index)).weight_logits;
        x.insert(x.end(), w.begin(), w.end());
        break;
      }
      case BlockKind::kCategorical: {
        const auto lp = std::get<CategoricalLeaf>(std::get<LeafNode>(s.circuit->node(b.index)).dist).log_probs();
        x.insert(x.end(), lp.begin(), lp.end());
        break;
      }
      case BlockKind::kDirichlet:
        for (double a : std::get<DirichletLeaf>(std::get<LeafNode>(s.circuit->node(b.index)).dist).alpha())
          x.push_back(raw_from_alpha(a));
        break;
      case BlockKind::kPredictorWeights:
        x.insert(x.end(), s.predictors[b.index]->weights.begin(), s.predictors[b.index]->weights.end());
        break;
      case BlockKind::kPredictorBias:
        x.insert(x.end(), s.predictors[b.index]->bias.begin(), s.predictors[b.index]->bias.end());
        break;
      case BlockKind::kWm: x.insert(x.end(), s.wm_logits.begin(), s.wm_logits.end()); break;
      case BlockKind::kMlp: {
        const auto* t = mlp_tensor(s.mlp, b.index);
        x.insert(x.end(), t->begin(), t->end());
        break;
      }
    }
  }
  return x;
}

std::vector<double> flatten(const ParamGradients& g) {
  std::vector<double> x;
  for (const auto& v : g.circuit.node) x.insert(x.end(), v.begin(), v.end());
  for (const auto& p : g.predictors) {
    x.insert(x.end(), p.weights.begin(), p.weights.end());
    x.insert(x.end(), p.bias.begin(), p.bias.end());
  }
  x.insert(x.end(), g.wm_logits.begin(), g.wm_logits.end());
  for (std::size_t i = 0; i < 6; ++i) x.insert(x.end(), mlp_tensor(g.mlp, i)->begin(), mlp_tensor(g.mlp, i)->end());
  return x;
}

void set_parameters(FusionSystem& s, std::span<const double> params, std::span<const double> previous) {
  const auto blocks = layout(s);
  const std::size_t total = blocks.empty() ? 0 : blocks.back().offset + blocks.back().size;
  if (params.size() != total || previous.size() != total) throw ContractError("parameter vector has the wrong size");
  for (const Block& b : blocks) {
    const auto now = params.subspan(b.offset, b.size);
    if (std::equal(now.begin(), now.end(), previous.begin() + static_cast<std::ptrdiff_t>(b.offset))) continue;
    std::vector<double> v(now.begin(), now.end());
    switch (b.kind) {
      case BlockKind::kSum: s.circuit->set_weight_logits(b.index, std::move(v)); break;
      case BlockKind::kCategorical: s.circuit->set_leaf_distribution(b.index, CategoricalLeaf(log_softmax(v))); break;
      case BlockKind::kDirichlet:
        for (double& a : v) a = alpha_from_raw(a);
        s.circuit->set_leaf_distribution(b.index, DirichletLeaf(std::move(v)));
        break;
      case BlockKind::kPredictorWeights: s.predictors[b.index]->weights = std::move(v); break;
      case BlockKind::kPredictorBias: s.predictors[b.index]->bias = std::move(v); break;
      case BlockKind::kWm: s.wm_logits = std::move(v); break;
      case BlockKind::kMlp: *mlp_tensor(s.mlp, b.index) = std::move(v); break;
    }
  }
}

std::vector<bool> predictor_mask(const FusionSystem& s) {
  std::vector<bool> mask;
  for (const Block& b : layout(s)) {
    const bool pred = b.kind == BlockKind::kPredictorWeights || b.kind == BlockKind::kPredictorBias;
    mask.insert(mask.end(), b.size, pred);
  }
  return mask;
}

// --- loop -------------------------------------------------------------------------------

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::kSgd;
  if (name == "adam") return Optimizer::kAdam;
  throw UsageError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

json to_json(const HistoryRecord& r) {
  json doc{{"iter", r.iter}, {"epoch", r.epoch}, {"loss", r.loss}, {"unimodal_losses", r.unimodal_losses},
           {"mean_credibility", r.mean_credibility}, {"credibility_stderr", r.credibility_stderr}};
  if (r.val_accuracy) doc["val_accuracy"] = *r.val_accuracy;
  if (r.val_metrics) doc["val_metrics"] = to_json(*r.val_metrics);
  return doc;
}

CredibilitySummary mean_relative_credibility(const FusionSystem& system, const MultimodalDataset& dataset,
                                             Split split) {
  if (!system.circuit) throw ContractError("credibility needs a circuit-based system");
  const auto idx = dataset.indices(split);
  if (idx.empty()) throw ContractError(std::string("split '") + std::string(split_name(split)) + "' is empty");
  const std::size_t m = system.num_modalities;
  std::vector<double> sum(m, 0.0), sumsq(m, 0.0);
  for (std::size_t i : idx) {
    const auto report = credibility(*system.circuit, system.modality_predictions(dataset.examples[i]));
    for (std::size_t j = 0; j < m; ++j) {
      sum[j] += report.relative[j];
      sumsq[j] += report.relative[j] * report.relative[j];
    }
  }
  const double n = static_cast<double>(idx.size());
  CredibilitySummary out;
  for (std::size_t j = 0; j < m; ++j) {
    const double mean = sum[j] / n;
    const double var = idx.size() > 1 ? std::max(0.0, (sumsq[j] - n * mean * mean) / (n - 1.0)) : 0.0;
    out.mean.push_back(mean);
    out.standard_error.push_back(std::sqrt(var / n));
  }
  return out;
}

MetricsReport evaluate(const FusionSystem& system, const MultimodalDataset& dataset, Split split) {
  const auto idx = dataset.indices(split);
  if (idx.empty()) throw ContractError(std::string("split '") + std::string(split_name(split)) + "' is empty");
  std::vector<ProbVector> preds;
  std::vector<std::size_t> labels;
  for (std::size_t i : idx) {
    preds.push_back(system.predict(dataset.examples[i]));
    labels.push_back(dataset.examples[i].label);
  }
  return compute_metrics(preds, labels);
}

namespace {

double mean_fused_loss(const FusionSystem& system, const MultimodalDataset& dataset, std::span<const std::size_t> idx) {
  double total = 0.0;
  for (std::size_t i : idx) {
    const auto& ex = dataset.examples[i];
    total += cross_entropy(system.predict(ex), ex.label).loss;
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

TrainResult train(FusionSystem& system, const MultimodalDataset& dataset, const TrainConfig& config) {
  if (config.batch_size == 0) throw ContractError("batch size must be >= 1");
  if (!(config.eta1 >= 0.0) || !(config.eta2 >= 0.0)) throw ContractError("learning rates must be >= 0");
  if (!(config.likelihood_weight >= 0.0)) throw ContractError("likelihood weight must be >= 0");
  dataset.validate();
  auto train_idx = dataset.indices(config.fit_split);
  if (train_idx.empty()) {
    if (dataset.count(Split::kUnassigned) != dataset.examples.size() || dataset.examples.empty())
      throw ContractError(std::string("dataset has no '") + std::string(split_name(config.fit_split)) + "' examples");
    train_idx.resize(dataset.examples.size());
    std::iota(train_idx.begin(), train_idx.end(), 0);
  }
  const auto val_idx = config.track_validation || config.patience > 0 ? dataset.indices(Split::kVal) : std::vector<std::size_t>{};
  const std::size_t per_epoch = (train_idx.size() + config.batch_size - 1) / config.batch_size;

  LossOptions opts;
  opts.likelihood_weight = config.likelihood_weight;
  opts.evidence_gradients = config.evidence_gradients;
  opts.classification_terms = config.classification_terms;

  auto params = get_parameters(system);
  const auto mask = predictor_mask(system);
  std::vector<double> lr(params.size());
  for (std::size_t i = 0; i < lr.size(); ++i) lr[i] = mask[i] ? (config.train_predictors ? config.eta1 : 0.0) : config.eta2;
  std::vector<double> m1(params.size(), 0.0), m2(params.size(), 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  TrainResult result;
  auto make_record = [&](std::size_t iter, std::size_t epoch, double loss, std::vector<double> unimodal) {
    HistoryRecord r;
    r.iter = iter;
    r.epoch = epoch;
    r.loss = loss;
    r.unimodal_losses = std::move(unimodal);
    if (!val_idx.empty()) {
      if (system.circuit) {
        auto summary = mean_relative_credibility(system, dataset, Split::kVal);
        r.mean_credibility = std::move(summary.mean);
        r.credibility_stderr = std::move(summary.standard_error);
      }
      r.val_accuracy = evaluate(system, dataset, Split::kVal).accuracy;
    }
    return r;
  };
  if (config.record_initial) {
    const auto res = loss_and_grads(system, dataset, train_idx, opts);
    result.history.push_back(make_record(0, 0, res.loss, res.unimodal_losses));
  }

  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
  std::vector<std::size_t> batch(config.batch_size);
  double epoch_loss = 0.0;
  std::vector<double> epoch_unimodal(system.num_modalities, 0.0);
  std::size_t epoch_iters = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::optional<FusionSystem> best;
  std::size_t since_best = 0;

  std::size_t t = 1;
  for (; t <= config.t_max; ++t) {
    for (auto& b : batch) b = train_idx[pick(rng)];
    LossResult res;
    try {
      res = loss_and_grads(system, dataset, batch, opts);
    } catch (const Error& e) {
      throw NumericError("iteration " + std::to_string(t) + ": " + e.what());
    }
    const auto g = flatten(res.grads);
    if (g.size() != params.size()) throw ContractError("gradient layout does not match the parameters");
    if (!std::isfinite(res.loss) || !std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); }))
      throw NumericError("iteration " + std::to_string(t) + ": non-finite loss or gradient" +
                         " (loss = " + std::to_string(res.loss) + ")");
    auto next = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (lr[i] == 0.0) continue;
      double step = g[i];
      if (config.optimizer == Optimizer::kAdam) {
        m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g[i];
        m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g[i] * g[i];
        const double mhat = m1[i] / (1.0 - std::pow(kBeta1, static_cast<double>(t)));
        const double vhat = m2[i] / (1.0 - std::pow(kBeta2, static_cast<double>(t)));
        step = mhat / (std::sqrt(vhat) + kEps);
      }
      next[i] -= lr[i] * step;
    }
    set_parameters(system, next, params);
    params = std::move(next);

    epoch_loss += res.loss;
    kernels::axpy(1.0, res.unimodal_losses, epoch_unimodal);
    ++epoch_iters;
    if (t % per_epoch == 0 || t == config.t_max) {
      const double inv = 1.0 / static_cast<double>(epoch_iters);
      for (double& u : epoch_unimodal) u *= inv;
      result.history.push_back(make_record(t, (t + per_epoch - 1) / per_epoch, epoch_loss * inv, epoch_unimodal));
      epoch_loss = 0.0;
      epoch_unimodal.assign(system.num_modalities, 0.0);
      epoch_iters = 0;
      if (config.patience > 0 && !val_idx.empty()) {
        const double val = mean_fused_loss(system, dataset, val_idx);
        if (val < best_val) {
          best_val = val;
          best = system;
          since_best = 0;
        } else if (++since_best >= config.patience) {
          system = *best;
          break;
        }
      }
    }
  }
  result.iterations = std::min(t, config.t_max);
  if (!result.history.empty() && !val_idx.empty()) result.history.back().val_metrics = evaluate(system, dataset, Split::kVal);
  return result;
}

}  // namespace credfuse
