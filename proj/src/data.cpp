#include "credfuse/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <string>

#include "credfuse/error.hpp"
#include "credfuse/numeric.hpp"

namespace credfuse {

using nlohmann::json;

namespace {

constexpr double kStoredProbTolerance = 1e-5;

std::vector<double> random_direction(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = sample_normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

/// Largest-remainder apportionment of `total` items by `weights`.
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights) {
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i];
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < total; ++r, ++used) ++out[rem[r % rem.size()].second];
  return out;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: break;
  }
  return "unassigned";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw UsageError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

void MultimodalDataset::validate() const {
  if (num_classes < 2) throw ContractError("dataset needs K >= 2");
  if (num_modalities < 1) throw ContractError("dataset needs M >= 1");
  if (dims.size() != num_modalities || kinds.size() != num_modalities)
    throw ContractError("dataset metadata does not describe every modality");
  for (std::size_t j = 0; j < num_modalities; ++j)
    if (kinds[j] == ModalityKind::kProbs && dims[j] != num_classes)
      throw ContractError("probability modality " + std::to_string(j + 1) + " must have dimension K");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& ex = examples[i];
    if (ex.label >= num_classes) throw ContractError("example " + std::to_string(i) + " has label out of range");
    if (ex.modalities.size() != num_modalities)
      throw ContractError("example " + std::to_string(i) + " has the wrong number of modalities");
    for (std::size_t j = 0; j < num_modalities; ++j) {
      const bool probs = std::holds_alternative<ProbVector>(ex.modalities[j]);
      const std::size_t size = probs ? std::get<ProbVector>(ex.modalities[j]).size()
                                     : std::get<FeatureVector>(ex.modalities[j]).size();
      if (probs != (kinds[j] == ModalityKind::kProbs) || size != dims[j])
        throw ContractError("example " + std::to_string(i) + " modality " + std::to_string(j + 1) +
                            " does not match the dataset header");
    }
    if (!ex.noise.empty() && ex.noise.size() != num_modalities)
      throw ContractError("example " + std::to_string(i) + " needs one noise entry per modality");
    for (const auto& o : ex.noise)
      if (o && (!(o->lambda >= 0.0 && o->lambda <= 1.0) || o->draw.size() != num_classes))
        throw ContractError("example " + std::to_string(i) + " has an invalid noise overlay");
  }
}

std::vector<std::size_t> MultimodalDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (examples[i].split == split) out.push_back(i);
  return out;
}

std::size_t MultimodalDataset::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(), [&](const Example& e) { return e.split == split; }));
}

MultimodalDataset generate_synthetic(const SynthConfig& config) {
  const std::size_t k = config.num_classes;
  const std::size_t m = config.num_modalities;
  if (config.num_examples == 0) throw ContractError("synthetic dataset needs N >= 1");
  if (k < 2 || m < 1) throw ContractError("synthetic dataset needs K >= 2 and M >= 1");
  if (!(config.class_separation > 0.0)) throw ContractError("class separation must be > 0");
  if (config.modality_noise.size() != m) throw ContractError("need one noise level per modality");
  for (double s : config.modality_noise)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ContractError("modality noise must be finite and >= 0");
  std::vector<std::size_t> dims = config.dims.empty() ? std::vector<std::size_t>(m, 2) : config.dims;
  if (dims.size() != m) throw ContractError("need one feature dimension per modality");
  for (std::size_t d : dims)
    if (d == 0) throw ContractError("feature dimensions must be >= 1");

  Rng means_rng(derive_seed(config.seed, 0));
  std::vector<std::vector<std::vector<double>>> means(m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < k; ++c) {
      auto dir = random_direction(dims[j], means_rng);
      for (double& x : dir) x *= config.class_separation;
      means[j].push_back(std::move(dir));
    }
  }

  std::vector<std::size_t> labels(config.num_examples);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % k;
  Rng rng(derive_seed(config.seed, 1));
  std::shuffle(labels.begin(), labels.end(), rng);

  MultimodalDataset ds;
  ds.num_classes = k;
  ds.num_modalities = m;
  ds.dims = dims;
  ds.kinds.assign(m, ModalityKind::kFeatures);
  ds.examples.reserve(config.num_examples);
  for (std::size_t label : labels) {
    Example ex;
    ex.label = label;
    for (std::size_t j = 0; j < m; ++j) {
      FeatureVector x = means[j][label];
      for (double& v : x) v += config.modality_noise[j] * sample_normal(rng);
      ex.modalities.emplace_back(std::move(x));
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

SynthConfig reference_synth_config(std::uint64_t seed) {
  SynthConfig config;
  config.num_classes = 4;
  config.num_modalities = 2;
  config.num_examples = 1200;
  config.class_separation = 2.0;
  config.modality_noise = {1.0, 1.5};
  config.dims = {2, 2};
  config.seed = seed;
  return config;
}

SynthConfig high_noise_synth_config(std::uint64_t seed) {
  SynthConfig config = reference_synth_config(seed);
  config.modality_noise = {1.0, 10.0};
  config.dims = {2, 40};
  return config;
}

ProbVector inject_noise(const ProbVector& p, double lambda, std::span<const double> alpha, Rng& rng) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("noise weight lambda must lie in [0, 1]");
  if (alpha.size() != p.size()) throw ParameterError("noise concentration must have one entry per class");
  for (double a : alpha)
    if (!(a > 0.0) || !std::isfinite(a)) throw ParameterError("noise concentration must be finite and > 0");
  const auto noise = sample_dirichlet(alpha, rng);
  if (lambda == 1.0) return p;
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * p[i] + (1.0 - lambda) * noise[i];
  return ProbVector::unchecked(std::move(out));
}

ProbVector apply_overlay(const ProbVector& p, const NoiseOverlay& overlay) {
  if (overlay.lambda == 1.0) return p;
  if (overlay.draw.size() != p.size()) throw ContractError("noise overlay has the wrong dimension");
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = overlay.lambda * p[i] + (1.0 - overlay.lambda) * overlay.draw[i];
  return ProbVector::unchecked(std::move(out));
}

void attach_noise(MultimodalDataset& dataset, std::size_t modality, double lambda, std::span<const double> alpha,
                  std::uint64_t seed, std::span<const Split> splits) {
  if (modality < 1 || modality > dataset.num_modalities) throw ContractError("noised modality out of range");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("noise weight lambda must lie in [0, 1]");
  if (alpha.size() != dataset.num_classes) throw ParameterError("noise concentration must have one entry per class");
  for (double a : alpha)
    if (!(a > 0.0) || !std::isfinite(a)) throw ParameterError("noise concentration must be finite and > 0");
  Rng rng(seed);
  for (auto& ex : dataset.examples) {
    if (std::find(splits.begin(), splits.end(), ex.split) == splits.end()) continue;
    if (ex.noise.empty()) ex.noise.resize(dataset.num_modalities);
    ex.noise[modality - 1] = NoiseOverlay{lambda, ProbVector::unchecked(sample_dirichlet(alpha, rng))};
  }
}

void split(MultimodalDataset& dataset, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0) || !std::isfinite(f)) throw ContractError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("split fractions must sum to 1");
  const std::size_t n = dataset.examples.size();
  const auto sizes = apportion(n, fractions);
  if (std::find(sizes.begin(), sizes.end(), std::size_t{0}) != sizes.end())
    throw ContractError("split leaves a partition empty; use more examples or larger fractions");

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t i = 0; i < n; ++i) by_class.at(dataset.examples[i].label).push_back(i);
  const bool stratify = std::all_of(by_class.begin(), by_class.end(), [](const auto& c) { return c.size() >= 3; });
  constexpr Split kOrder[3] = {Split::kTrain, Split::kVal, Split::kTest};

  if (!stratify) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < sizes[s]; ++i) dataset.examples[order[pos++]].split = kOrder[s];
    return;
  }

  // Per-class floors, then hand out the remaining slots of each split to the
  // classes with the largest fractional parts.
  const std::size_t k = by_class.size();
  std::vector<std::array<std::size_t, 3>> cell(k);
  std::vector<std::tuple<double, std::size_t, int>> rem;
  std::array<std::size_t, 3> deficit = {sizes[0], sizes[1], sizes[2]};
  std::vector<std::size_t> left(k);
  for (std::size_t c = 0; c < k; ++c) {
    left[c] = by_class[c].size();
    for (int s = 0; s < 3; ++s) {
      const double exact = static_cast<double>(by_class[c].size()) * fractions[s];
      cell[c][s] = static_cast<std::size_t>(std::floor(exact));
      deficit[s] -= cell[c][s];
      left[c] -= cell[c][s];
      rem.emplace_back(exact - std::floor(exact), c, s);
    }
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
  for (const auto& [frac, c, s] : rem) {
    if (left[c] > 0 && deficit[s] > 0) {
      ++cell[c][s];
      --left[c];
      --deficit[s];
    }
  }
  for (std::size_t c = 0; c < k; ++c)
    for (int s = 0; s < 3 && left[c] > 0; ++s)
      while (left[c] > 0 && deficit[s] > 0) {
        ++cell[c][s];
        --left[c];
        --deficit[s];
      }

  for (std::size_t c = 0; c < k; ++c) {
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < cell[c][s]; ++i) dataset.examples[by_class[c][pos++]].split = kOrder[s];
  }
}

// --- storage ---------------------------------------------------------------------

void save_dataset(const MultimodalDataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  json kinds = json::array();
  for (auto kind : dataset.kinds) kinds.push_back(kind == ModalityKind::kProbs ? "probs" : "features");
  out << json{{"schema_version", kDatasetSchemaVersion},
              {"K", dataset.num_classes},
              {"M", dataset.num_modalities},
              {"dims", dataset.dims},
              {"kinds", kinds}}
             .dump()
      << '\n';
  for (const Example& ex : dataset.examples) {
    json mods = json::array();
    for (const auto& v : ex.modalities) {
      if (const auto* p = std::get_if<ProbVector>(&v)) mods.push_back({{"probs", p->vector()}});
      else mods.push_back({{"features", std::get<FeatureVector>(v)}});
    }
    json rec{{"label", ex.label}, {"modalities", std::move(mods)}};
    if (ex.split != Split::kUnassigned) rec["split"] = split_name(ex.split);
    if (!ex.noise.empty()) {
      json noise = json::array();
      for (const auto& o : ex.noise) {
        if (o) noise.push_back({{"lambda", o->lambda}, {"draw", o->draw.vector()}});
        else noise.push_back(nullptr);
      }
      rec["noise"] = std::move(noise);
    }
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

MultimodalDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  MultimodalDataset ds;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  try {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty dataset file");
    ++line_no;
    const json header = json::parse(line);
    if (header.at("schema_version").get<int>() != kDatasetSchemaVersion)
      throw fail("unsupported dataset schema_version");
    ds.num_classes = header.at("K").get<std::size_t>();
    ds.num_modalities = header.at("M").get<std::size_t>();
    ds.dims = header.at("dims").get<std::vector<std::size_t>>();
    for (const auto& kind : header.at("kinds")) {
      const auto name = kind.get<std::string>();
      if (name == "probs") ds.kinds.push_back(ModalityKind::kProbs);
      else if (name == "features") ds.kinds.push_back(ModalityKind::kFeatures);
      else throw fail("unknown modality kind '" + name + "'");
    }
    if (ds.dims.size() != ds.num_modalities || ds.kinds.size() != ds.num_modalities)
      throw fail("header dims/kinds do not match M");

    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json rec = json::parse(line);
      Example ex;
      const auto label = rec.at("label").get<std::int64_t>();
      if (label < 0 || static_cast<std::size_t>(label) >= ds.num_classes) throw fail("label out of range");
      ex.label = static_cast<std::size_t>(label);
      if (rec.contains("split")) ex.split = parse_split(rec.at("split").get<std::string>());
      const auto& mods = rec.at("modalities");
      if (mods.size() != ds.num_modalities)
        throw fail("expected " + std::to_string(ds.num_modalities) + " modality entries, found " +
                   std::to_string(mods.size()));
      for (std::size_t j = 0; j < ds.num_modalities; ++j) {
        const json& m = mods[j];
        if (ds.kinds[j] == ModalityKind::kProbs) {
          if (!m.contains("probs")) throw fail("modality " + std::to_string(j + 1) + " needs 'probs'");
          auto p = m.at("probs").get<std::vector<double>>();
          if (p.size() != ds.dims[j]) throw fail("modality " + std::to_string(j + 1) + " has ragged dimension");
          if (!on_simplex(p, kStoredProbTolerance))
            throw fail("modality " + std::to_string(j + 1) + " probabilities are not on the simplex");
          const double total = std::accumulate(p.begin(), p.end(), 0.0);
          for (double& v : p) v /= total;
          ex.modalities.emplace_back(ProbVector::unchecked(std::move(p)));
        } else {
          if (!m.contains("features")) throw fail("modality " + std::to_string(j + 1) + " needs 'features'");
          auto x = m.at("features").get<std::vector<double>>();
          if (x.size() != ds.dims[j]) throw fail("modality " + std::to_string(j + 1) + " has ragged dimension");
          ex.modalities.emplace_back(std::move(x));
        }
      }
      if (rec.contains("noise")) {
        const auto& noise = rec.at("noise");
        if (noise.size() != ds.num_modalities) throw fail("noise needs one entry per modality");
        for (const auto& o : noise) {
          if (o.is_null()) {
            ex.noise.emplace_back(std::nullopt);
            continue;
          }
          auto draw = o.at("draw").get<std::vector<double>>();
          if (draw.size() != ds.num_classes || !on_simplex(draw, kStoredProbTolerance))
            throw fail("noise draw is not a point on the simplex");
          ex.noise.emplace_back(NoiseOverlay{o.at("lambda").get<double>(), ProbVector::unchecked(std::move(draw))});
        }
      }
      ds.examples.push_back(std::move(ex));
    }
    ds.validate();
  } catch (const json::exception& e) {
    throw fail(std::string("malformed record: ") + e.what());
  } catch (const ContractError& e) {
    throw fail(e.what());
  } catch (const UsageError& e) {
    throw fail(e.what());
  }
  return ds;
}

void export_csv(const MultimodalDataset& dataset, const std::filesystem::path& path) {
  for (auto kind : dataset.kinds)
    if (kind != ModalityKind::kProbs) throw ContractError("CSV export needs precomputed probabilities for every modality");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "label";
  for (std::size_t j = 1; j <= dataset.num_modalities; ++j)
    for (std::size_t k = 0; k < dataset.num_classes; ++k) out << fmt::format(",m{}_p{}", j, k);
  out << '\n';
  for (const Example& ex : dataset.examples) {
    out << ex.label;
    for (const auto& v : ex.modalities)
      for (double p : std::get<ProbVector>(v).values()) out << fmt::format(",{:.17g}", p);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace credfuse
