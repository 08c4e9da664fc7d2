#include "credfuse/fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "credfuse/error.hpp"
#include "credfuse/kernels.hpp"
#include "credfuse/numeric.hpp"
#include "credfuse/random.hpp"

namespace credfuse {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kDegenerateSum = 1e-15;

using Modalities = std::vector<std::optional<ProbVector>>;

Modalities all_of(std::span<const ProbVector> preds) { return Modalities(preds.begin(), preds.end()); }

Modalities all_but(std::span<const ProbVector> preds, std::size_t j) {
  Modalities m = all_of(preds);
  m[j].reset();
  return m;
}

void check_preds(const Circuit& circuit, std::span<const ProbVector> preds) {
  if (preds.size() != circuit.num_modalities())
    throw ContractError("expected " + std::to_string(circuit.num_modalities()) + " predictions, got " +
                        std::to_string(preds.size()));
}

void check_preds(std::span<const ProbVector> preds) {
  if (preds.empty()) throw ContractError("fusion needs at least one prediction");
  for (const auto& p : preds)
    if (p.size() != preds[0].size()) throw ContractError("predictions disagree on the class count");
}

void size_sink(EvidenceGradients* evidence, std::size_t m, std::size_t k) {
  if (evidence == nullptr) return;
  evidence->resize(m);
  for (auto& g : *evidence)
    if (g.empty()) g.assign(k, 0.0);
}

/// KL(P || Q) from log-probabilities; P_k = 0 terms vanish.
double kl_from_logs(std::span<const double> log_p, std::span<const double> log_q) {
  double kl = 0.0;
  for (std::size_t k = 0; k < log_p.size(); ++k) {
    const double p = std::exp(log_p[k]);
    if (p > 0.0) kl += p * (log_p[k] - log_q[k]);
  }
  return std::max(0.0, kl);
}

/// Backpropagates d(score_y) for every class y, where score_y is the circuit
/// log-value with target y under the given modalities.
void scores_backward(const Circuit& circuit, const Modalities& mods, std::span<const double> d_scores,
                     CircuitGradients* params, EvidenceGradients* evidence) {
  Evidence ev;
  ev.modalities = mods;
  for (std::size_t y = 0; y < d_scores.size(); ++y) {
    if (d_scores[y] == 0.0) continue;
    ev.target = y;
    backward(circuit, forward(circuit, ev), d_scores[y], params, evidence);
  }
}

}  // namespace

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw ContractError("KL divergence of vectors with different sizes");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbFloor)));
  return std::max(0.0, kl);
}

std::vector<double> relative_credibility(std::span<const double> raw) {
  if (raw.empty()) throw ContractError("relative credibility of an empty vector");
  for (double r : raw)
    if (!(r >= 0.0) || !std::isfinite(r)) throw ContractError("credibility scores must be finite and >= 0");
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  std::vector<double> rel(raw.size(), 1.0 / static_cast<double>(raw.size()));
  if (total > kDegenerateSum)
    for (std::size_t j = 0; j < raw.size(); ++j) rel[j] = raw[j] / total;
  return rel;
}

CredibilityReport credibility(const Circuit& circuit, std::span<const ProbVector> preds) {
  check_preds(circuit, preds);
  const auto full = log_target_scores(circuit, all_of(preds));
  if (log_sum_exp(full) == -std::numeric_limits<double>::infinity())
    throw NumericError("every class has zero joint density under the evidence");
  const auto log_p = log_softmax(full);

  CredibilityReport report;
  report.posterior_full = ProbVector::unchecked(softmax(full));
  for (std::size_t j = 0; j < preds.size(); ++j) {
    const auto loo = log_target_scores(circuit, all_but(preds, j));
    const auto log_q = log_softmax(loo);
    report.posteriors_loo.push_back(ProbVector::unchecked(softmax(loo)));
    report.raw.push_back(kl_from_logs(log_p, log_q));
  }
  report.relative = relative_credibility(report.raw);
  return report;
}

nlohmann::json to_json(const CredibilityReport& report) {
  nlohmann::json loo = nlohmann::json::array();
  for (const auto& q : report.posteriors_loo) loo.push_back(q.vector());
  return {{"raw", report.raw},
          {"relative", report.relative},
          {"posterior_full", report.posterior_full.vector()},
          {"posteriors_loo", std::move(loo)}};
}

ProbVector fuse_dpc(const Circuit& circuit, std::span<const ProbVector> preds) {
  check_preds(circuit, preds);
  return posterior_over_target(circuit, preds);
}

ProbVector fuse_cwm(const Circuit& circuit, std::span<const ProbVector> preds) {
  const auto report = credibility(circuit, preds);
  std::vector<double> fused(circuit.num_classes(), 0.0);
  for (std::size_t j = 0; j < preds.size(); ++j) kernels::axpy(report.relative[j], preds[j].values(), fused);
  return ProbVector::unchecked(std::move(fused));
}

void fuse_dpc_backward(const Circuit& circuit, std::span<const ProbVector> preds, std::span<const double> upstream,
                       CircuitGradients* params, EvidenceGradients* evidence) {
  check_preds(circuit, preds);
  const auto mods = all_of(preds);
  const auto post = softmax(log_target_scores(circuit, mods));
  const double mean = kernels::dot(post, upstream);
  std::vector<double> d_scores(post.size());
  for (std::size_t y = 0; y < post.size(); ++y) d_scores[y] = post[y] * (upstream[y] - mean);
  size_sink(evidence, preds.size(), circuit.num_classes());
  scores_backward(circuit, mods, d_scores, params, evidence);
}

void fuse_cwm_backward(const Circuit& circuit, std::span<const ProbVector> preds, std::span<const double> upstream,
                       CircuitGradients* params, EvidenceGradients* evidence) {
  check_preds(circuit, preds);
  const std::size_t m = preds.size();
  const std::size_t k = circuit.num_classes();
  const auto full_mods = all_of(preds);
  const auto log_p = log_softmax(log_target_scores(circuit, full_mods));
  std::vector<std::vector<double>> log_q(m);
  std::vector<double> raw(m);
  for (std::size_t j = 0; j < m; ++j) {
    log_q[j] = log_softmax(log_target_scores(circuit, all_but(preds, j)));
    raw[j] = kl_from_logs(log_p, log_q[j]);
  }
  const auto w = relative_credibility(raw);
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);

  size_sink(evidence, m, k);
  if (evidence)
    for (std::size_t j = 0; j < m; ++j) kernels::axpy(w[j], upstream, (*evidence)[j]);
  if (total <= kDegenerateSum) return;

  std::vector<double> d_w(m);
  for (std::size_t j = 0; j < m; ++j) d_w[j] = kernels::dot(upstream, preds[j].values());
  const double mean = kernels::dot(w, d_w);

  std::vector<double> d_full(k, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const double d_raw = (d_w[j] - mean) / total;
    if (d_raw == 0.0) continue;
    std::vector<double> d_loo(k);
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(log_p[c]);
      const double q = std::exp(log_q[j][c]);
      const double diff = p > 0.0 ? log_p[c] - log_q[j][c] : 0.0;
      d_full[c] += d_raw * p * (diff - raw[j]);
      d_loo[c] = d_raw * (q - p);
    }
    scores_backward(circuit, all_but(preds, j), d_loo, params, evidence);
  }
  scores_backward(circuit, full_mods, d_full, params, evidence);
}

// --- baselines ----------------------------------------------------------------

ProbVector baseline_weighted_mean(std::span<const double> weight_logits, std::span<const ProbVector> preds) {
  check_preds(preds);
  if (weight_logits.size() != preds.size()) throw ContractError("one weight logit per modality required");
  const auto w = softmax(weight_logits);
  std::vector<double> fused(preds[0].size(), 0.0);
  for (std::size_t j = 0; j < preds.size(); ++j) kernels::axpy(w[j], preds[j].values(), fused);
  return ProbVector::unchecked(std::move(fused));
}

void baseline_weighted_mean_backward(std::span<const double> weight_logits, std::span<const ProbVector> preds,
                                     std::span<const double> upstream, std::span<double> d_logits,
                                     EvidenceGradients* evidence) {
  check_preds(preds);
  const auto w = softmax(weight_logits);
  std::vector<double> d_w(preds.size());
  for (std::size_t j = 0; j < preds.size(); ++j) d_w[j] = kernels::dot(upstream, preds[j].values());
  const double mean = kernels::dot(w, d_w);
  for (std::size_t j = 0; j < preds.size(); ++j) d_logits[j] += w[j] * (d_w[j] - mean);
  size_sink(evidence, preds.size(), preds[0].size());
  if (evidence)
    for (std::size_t j = 0; j < preds.size(); ++j) kernels::axpy(w[j], upstream, (*evidence)[j]);
}

namespace {

std::vector<double> noisy_or_scores(std::span<const ProbVector> preds) {
  std::vector<double> s(preds[0].size());
  for (std::size_t y = 0; y < s.size(); ++y) {
    double miss = 1.0;
    for (const auto& p : preds) miss *= 1.0 - p[y];
    s[y] = 1.0 - miss;
  }
  return s;
}

}  // namespace

ProbVector baseline_noisy_or(std::span<const ProbVector> preds) {
  check_preds(preds);
  auto s = noisy_or_scores(preds);
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  for (double& v : s) v /= total;
  return ProbVector::unchecked(std::move(s));
}

void baseline_noisy_or_backward(std::span<const ProbVector> preds, std::span<const double> upstream,
                                EvidenceGradients* evidence) {
  check_preds(preds);
  if (evidence == nullptr) return;
  const auto s = noisy_or_scores(preds);
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  double mean = 0.0;
  for (std::size_t y = 0; y < s.size(); ++y) mean += upstream[y] * s[y] / total;
  size_sink(evidence, preds.size(), s.size());
  for (std::size_t y = 0; y < s.size(); ++y) {
    const double d_s = (upstream[y] - mean) / total;
    for (std::size_t j = 0; j < preds.size(); ++j) {
      double others = 1.0;
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (i != j) others *= 1.0 - preds[i][y];
      (*evidence)[j][y] += d_s * others;
    }
  }
}

MlpParams MlpParams::zeros(std::size_t input, std::size_t output, std::size_t hidden) {
  MlpParams p;
  p.input = input;
  p.hidden = hidden;
  p.output = output;
  p.w1.assign(hidden * input, 0.0);
  p.b1.assign(hidden, 0.0);
  p.w2.assign(hidden * hidden, 0.0);
  p.b2.assign(hidden, 0.0);
  p.w3.assign(output * hidden, 0.0);
  p.b3.assign(output, 0.0);
  return p;
}

MlpParams MlpParams::random(std::size_t input, std::size_t output, std::uint64_t seed, std::size_t hidden) {
  MlpParams p = zeros(input, output, hidden);
  Rng rng(seed);
  auto fill = [&](std::vector<double>& w, std::size_t fan_in) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w) v = limit * u(rng);
  };
  fill(p.w1, input);
  fill(p.w2, hidden);
  fill(p.w3, hidden);
  return p;
}

namespace {

struct MlpActivations {
  std::vector<double> x, h1, h2, out;
};

void dense(std::span<const double> w, std::span<const double> b, std::span<const double> in, std::vector<double>& out,
           bool relu) {
  out.resize(b.size());
  for (std::size_t o = 0; o < b.size(); ++o) {
    const double z = kernels::dot(w.subspan(o * in.size(), in.size()), in) + b[o];
    out[o] = relu ? std::max(0.0, z) : z;
  }
}

MlpActivations mlp_forward(const MlpParams& params, std::span<const ProbVector> preds) {
  check_preds(preds);
  MlpActivations a;
  for (const auto& p : preds) a.x.insert(a.x.end(), p.values().begin(), p.values().end());
  if (a.x.size() != params.input || preds[0].size() != params.output)
    throw ContractError("MLP expects " + std::to_string(params.input) + " inputs and " +
                        std::to_string(params.output) + " classes");
  dense(params.w1, params.b1, a.x, a.h1, true);
  dense(params.w2, params.b2, a.h1, a.h2, true);
  std::vector<double> z;
  dense(params.w3, params.b3, a.h2, z, false);
  a.out = softmax(z);
  return a;
}

/// Accumulates dW += d_out (x) in and db += d_out; returns W^T d_out masked by
/// the ReLU of `in` when requested.
std::vector<double> dense_backward(std::span<const double> w, std::span<const double> in, std::span<const double> d_out,
                                   std::span<double> d_w, std::span<double> d_b, bool relu_in) {
  std::vector<double> d_in(in.size(), 0.0);
  for (std::size_t o = 0; o < d_out.size(); ++o) {
    if (d_out[o] == 0.0) continue;
    kernels::axpy(d_out[o], in, d_w.subspan(o * in.size(), in.size()));
    d_b[o] += d_out[o];
    kernels::axpy(d_out[o], w.subspan(o * in.size(), in.size()), d_in);
  }
  if (relu_in)
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] <= 0.0) d_in[i] = 0.0;
  return d_in;
}

}  // namespace

ProbVector baseline_mlp(const MlpParams& params, std::span<const ProbVector> preds) {
  return ProbVector::unchecked(mlp_forward(params, preds).out);
}

void baseline_mlp_backward(const MlpParams& params, std::span<const ProbVector> preds, std::span<const double> upstream,
                           MlpParams* grads, EvidenceGradients* evidence) {
  const auto a = mlp_forward(params, preds);
  MlpParams scratch;
  if (grads == nullptr) {
    scratch = MlpParams::zeros(params.input, params.output, params.hidden);
    grads = &scratch;
  }
  const double mean = kernels::dot(a.out, upstream);
  std::vector<double> d_z(a.out.size());
  for (std::size_t i = 0; i < d_z.size(); ++i) d_z[i] = a.out[i] * (upstream[i] - mean);
  const auto d_h2 = dense_backward(params.w3, a.h2, d_z, grads->w3, grads->b3, true);
  const auto d_h1 = dense_backward(params.w2, a.h1, d_h2, grads->w2, grads->b2, true);
  const auto d_x = dense_backward(params.w1, a.x, d_h1, grads->w1, grads->b1, false);
  if (evidence) {
    const std::size_t k = preds[0].size();
    size_sink(evidence, preds.size(), k);
    for (std::size_t j = 0; j < preds.size(); ++j)
      for (std::size_t c = 0; c < k; ++c) (*evidence)[j][c] += d_x[j * k + c];
  }
}

nlohmann::json to_json(const MlpParams& p) {
  return {{"input", p.input}, {"hidden", p.hidden}, {"output", p.output}, {"w1", p.w1}, {"b1", p.b1},
          {"w2", p.w2},       {"b2", p.b2},         {"w3", p.w3},         {"b3", p.b3}};
}

MlpParams mlp_from_json(const nlohmann::json& doc) {
  MlpParams p = MlpParams::zeros(doc.at("input").get<std::size_t>(), doc.at("output").get<std::size_t>(),
                                 doc.at("hidden").get<std::size_t>());
  auto read = [&](const char* key, std::vector<double>& dst) {
    auto v = doc.at(key).get<std::vector<double>>();
    if (v.size() != dst.size()) throw FormatError(std::string("MLP tensor '") + key + "' has the wrong size");
    dst = std::move(v);
  };
  read("w1", p.w1);
  read("b1", p.b1);
  read("w2", p.w2);
  read("b2", p.b2);
  read("w3", p.w3);
  read("b3", p.b3);
  return p;
}

// --- bound check ---------------------------------------------------------------

std::vector<BoundCheck> entropy_bound_check(const Circuit& circuit, const BoundCheckOptions& options) {
  if (circuit.num_classes() != 2 || circuit.num_modalities() != 2)
    throw ContractError("entropy bound check is defined for K = 2, M = 2 only");
  if (options.num_samples < 2) throw ContractError("entropy bound check needs at least two samples");
  if (options.enforce_precondition) {
    const auto bad = unbounded_leaves(circuit);
    if (!bad.empty()) {
      std::string ids;
      for (NodeId id : bad) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
      throw ContractError("leaf densities not bounded by one at nodes " + ids);
    }
  }

  const SimplexGrid grid = simplex_grid(2, options.grid_resolution);
  const std::size_t r = grid.points.size();
  // log P(p_2) indexed by p_2's cell, log P(p_1) by p_1's cell
  std::vector<double> log_only2(r), log_only1(r);
  for (std::size_t i = 0; i < r; ++i) {
    Evidence ev = Evidence::none(2);
    ev.modalities[1] = grid.points[i];
    log_only2[i] = log_marginal(circuit, ev);
    ev = Evidence::none(2);
    ev.modalities[0] = grid.points[i];
    log_only1[i] = log_marginal(circuit, ev);
  }

  std::vector<double> log_mass(r * r);
  std::vector<double> log_density(r * r);
  std::vector<std::array<double, 2>> cred(r * r);
  for (std::size_t a = 0; a < r; ++a) {
    for (std::size_t b = 0; b < r; ++b) {
      const std::vector<ProbVector> preds{grid.points[a], grid.points[b]};
      const std::size_t cell = a * r + b;
      log_density[cell] = log_marginal(circuit, Evidence::of_modalities(preds));
      log_mass[cell] = log_density[cell] + std::log(grid.weights[a] * grid.weights[b]);
      const auto report = credibility(circuit, preds);
      cred[cell] = {report.raw[0], report.raw[1]};
    }
  }
  const auto pi = softmax(log_mass);

  std::vector<BoundCheck> out(2);
  for (std::size_t cell = 0; cell < pi.size(); ++cell) {
    if (pi[cell] == 0.0) continue;
    const std::size_t a = cell / r;
    const std::size_t b = cell % r;
    out[0].rhs += pi[cell] * (log_density[cell] - log_only2[b]);
    out[1].rhs += pi[cell] * (log_density[cell] - log_only1[a]);
  }

  Rng rng(options.seed);
  std::discrete_distribution<std::size_t> pick(pi.begin(), pi.end());
  std::array<double, 2> sum{0.0, 0.0}, sum_sq{0.0, 0.0};
  for (std::size_t s = 0; s < options.num_samples; ++s) {
    const auto& c = cred[pick(rng)];
    for (int j = 0; j < 2; ++j) {
      sum[j] += c[j];
      sum_sq[j] += c[j] * c[j];
    }
  }
  const double n = static_cast<double>(options.num_samples);
  for (int j = 0; j < 2; ++j) {
    out[j].lhs = sum[j] / n;
    const double var = std::max(0.0, (sum_sq[j] - n * out[j].lhs * out[j].lhs) / (n - 1.0));
    out[j].standard_error = std::sqrt(var / n);
    out[j].satisfied = out[j].lhs >= out[j].rhs - 3.0 * out[j].standard_error - 1e-9;
  }
  return out;
}

}  // namespace credfuse
