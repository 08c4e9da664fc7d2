#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "credfuse/data.hpp"
#include "credfuse/error.hpp"
#include "credfuse/training.hpp"
#include "test_support.hpp"

namespace credfuse {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("credfuse_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Full-batch gradient descent on one modality; returns train accuracy.
double unimodal_train_accuracy(const MultimodalDataset& ds, std::size_t j, int steps = 400, double lr = 0.5) {
  auto pred = LinearSoftmax::zeros(ds.dims[j], ds.num_classes);
  const double inv_n = 1.0 / static_cast<double>(ds.examples.size());
  for (int t = 0; t < steps; ++t) {
    auto grads = LinearSoftmax::zeros(ds.dims[j], ds.num_classes);
    for (const auto& ex : ds.examples) {
      const auto& x = std::get<FeatureVector>(ex.modalities[j]);
      auto ce = cross_entropy(predictor_forward(pred, x), ex.label);
      for (double& g : ce.grad) g *= inv_n;
      predictor_backward(pred, x, ce.grad, grads);
    }
    for (std::size_t i = 0; i < pred.weights.size(); ++i) pred.weights[i] -= lr * grads.weights[i];
    for (std::size_t i = 0; i < pred.bias.size(); ++i) pred.bias[i] -= lr * grads.bias[i];
  }
  std::size_t correct = 0;
  for (const auto& ex : ds.examples)
    correct += argmax(predictor_forward(pred, std::get<FeatureVector>(ex.modalities[j])).values()) == ex.label;
  return static_cast<double>(correct) * inv_n;
}

MultimodalDataset small_prob_dataset() {
  MultimodalDataset ds;
  ds.num_classes = 3;
  ds.num_modalities = 2;
  ds.dims = {3, 2};
  ds.kinds = {ModalityKind::kProbs, ModalityKind::kFeatures};
  ds.examples.push_back({{ProbVector{0.1, 0.2, 0.7}, FeatureVector{1.5, -0.25}}, 2, Split::kTrain});
  ds.examples.push_back({{ProbVector{1.0 / 3, 1.0 / 3, 1.0 / 3}, FeatureVector{0.1, 1e-300}}, 0, Split::kTest});
  ds.examples.push_back({{ProbVector{0.0, 1.0, 0.0}, FeatureVector{-7.0, 3.0}}, 1, Split::kUnassigned});
  return ds;
}

TEST(Synthetic, SeparableAndNoisyModalities) {
  SynthConfig cfg;
  cfg.num_classes = 2;
  cfg.num_examples = 400;
  cfg.class_separation = 3.0;
  cfg.modality_noise = {0.1, 10.0};
  cfg.seed = 11;
  const auto ds = generate_synthetic(cfg);
  EXPECT_GE(unimodal_train_accuracy(ds, 0), 0.95);
  EXPECT_LE(unimodal_train_accuracy(ds, 1), 0.65);
}

TEST(Synthetic, HugeNoiseApproachesChance) {
  SynthConfig cfg;
  cfg.num_classes = 4;
  cfg.num_examples = 2000;
  cfg.modality_noise = {1e4, 1e4};
  cfg.seed = 3;
  const auto ds = generate_synthetic(cfg);
  EXPECT_NEAR(unimodal_train_accuracy(ds, 1, 200, 1e-7), 0.25, 0.05);
}

TEST(Synthetic, EmptyAndInvalidConfigsThrow) {
  SynthConfig cfg;
  cfg.num_examples = 0;
  EXPECT_THROW(generate_synthetic(cfg), ContractError);
  cfg = {};
  cfg.modality_noise = {1.0, -1.0};
  EXPECT_THROW(generate_synthetic(cfg), ContractError);
  cfg = {};
  cfg.modality_noise = {1.0};
  EXPECT_THROW(generate_synthetic(cfg), ContractError);
  cfg = {};
  cfg.class_separation = 0.0;
  EXPECT_THROW(generate_synthetic(cfg), ContractError);
}

TEST(Synthetic, DeterministicBytes) {
  TempDir dir;
  SynthConfig cfg;
  cfg.seed = 7;
  save_dataset(generate_synthetic(cfg), dir / "a.jsonl");
  save_dataset(generate_synthetic(cfg), dir / "b.jsonl");
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  cfg.seed = 8;
  save_dataset(generate_synthetic(cfg), dir / "c.jsonl");
  EXPECT_NE(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
}

TEST(Synthetic, ShapeAndBalance) {
  SynthConfig cfg;
  cfg.num_classes = 3;
  cfg.num_modalities = 3;
  cfg.num_examples = 100;
  cfg.modality_noise = {1, 2, 3};
  cfg.dims = {1, 4, 2};
  const auto ds = generate_synthetic(cfg);
  ds.validate();
  ASSERT_EQ(ds.examples.size(), 100u);
  std::vector<int> counts(3);
  for (const auto& ex : ds.examples) {
    ++counts[ex.label];
    EXPECT_EQ(std::get<FeatureVector>(ex.modalities[1]).size(), 4u);
  }
  EXPECT_EQ(counts, (std::vector<int>{34, 33, 33}));
}

TEST(Synthetic, ZeroNoisePutsFeaturesOnTheSphere) {
  SynthConfig cfg;
  cfg.modality_noise = {0.0, 0.0};
  cfg.class_separation = 2.5;
  cfg.dims = {3, 5};
  for (const auto& ex : generate_synthetic(cfg).examples)
    for (const auto& v : ex.modalities) {
      double n2 = 0;
      for (double x : std::get<FeatureVector>(v)) n2 += x * x;
      EXPECT_NEAR(std::sqrt(n2), 2.5, 1e-12);
    }
}

TEST(InjectNoise, Endpoints) {
  const ProbVector p{0.2, 0.3, 0.5};
  const std::vector<double> alpha{1, 1, 1};
  Rng rng(5), twin(5);
  EXPECT_EQ(inject_noise(p, 1.0, alpha, rng), p);
  sample_dirichlet(alpha, twin);  // the lambda = 1 call still consumes a draw
  const auto n = inject_noise(p, 0.0, alpha, rng);
  const auto expected = sample_dirichlet(alpha, twin);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(n[i], expected[i]);
}

TEST(NoiseOverlay, MatchesInjectNoiseStream) {
  auto ds = small_prob_dataset();
  const std::vector<double> alpha{1, 2, 3};
  const Split splits[] = {Split::kTrain, Split::kUnassigned};
  attach_noise(ds, 1, 0.4, alpha, 77, splits);
  ds.validate();
  Rng rng(77);
  for (std::size_t i : {std::size_t{0}, std::size_t{2}}) {
    const auto& p = std::get<ProbVector>(ds.examples[i].modalities[0]);
    ASSERT_TRUE(ds.examples[i].noise[0].has_value());
    EXPECT_FALSE(ds.examples[i].noise[1].has_value());
    EXPECT_EQ(apply_overlay(p, *ds.examples[i].noise[0]), inject_noise(p, 0.4, alpha, rng));
  }
  EXPECT_TRUE(ds.examples[1].noise.empty());
  EXPECT_THROW(attach_noise(ds, 3, 0.4, alpha, 1, splits), ContractError);
  EXPECT_THROW(attach_noise(ds, 1, 1.4, alpha, 1, splits), ParameterError);
}

TEST(NoiseOverlay, IdentityAtLambdaOne) {
  const ProbVector p{0.3, 0.7};
  EXPECT_EQ(apply_overlay(p, {1.0, ProbVector{0.9, 0.1}}), p);
}

TEST(NoiseOverlay, StorageRoundTrip) {
  TempDir dir;
  auto ds = small_prob_dataset();
  const Split splits[] = {Split::kTest};
  attach_noise(ds, 2, 0.25, std::vector<double>{1, 1, 1}, 5, splits);
  save_dataset(ds, dir / "n.jsonl");
  EXPECT_EQ(load_dataset(dir / "n.jsonl"), ds);
}

TEST(InjectNoise, HalfwayIsConvexArithmetic) {
  const ProbVector p{1.0, 0.0};
  const std::vector<double> alpha{1, 1};
  Rng rng(42), twin(42);
  const auto noise = sample_dirichlet(alpha, twin);
  const auto out = inject_noise(p, 0.5, alpha, rng);
  EXPECT_DOUBLE_EQ(out[0], 0.5 + 0.5 * noise[0]);
  EXPECT_DOUBLE_EQ(out[1], 0.5 * noise[1]);
}

TEST(InjectNoise, InvalidArgumentsThrow) {
  Rng rng(1);
  const ProbVector p{0.5, 0.5};
  EXPECT_THROW(inject_noise(p, -0.1, std::vector<double>{1, 1}, rng), ParameterError);
  EXPECT_THROW(inject_noise(p, 1.5, std::vector<double>{1, 1}, rng), ParameterError);
  EXPECT_THROW(inject_noise(p, std::nan(""), std::vector<double>{1, 1}, rng), ParameterError);
  EXPECT_THROW(inject_noise(p, 0.5, std::vector<double>{1, 0}, rng), ParameterError);
  EXPECT_THROW(inject_noise(p, 0.5, std::vector<double>{1, 1, 1}, rng), ParameterError);
}

TEST(InjectNoise, StaysOnSimplex) {
  Rng rng(9);
  for (int t = 0; t < 500; ++t) {
    const auto p = ProbVector::unchecked(testing::random_simplex(4, rng));
    const double lambda = sample_uniform(rng);
    const auto alpha = std::vector<double>{0.3, 1.0, 2.0, 5.0};
    const auto out = inject_noise(p, lambda, alpha, rng);
    double total = 0;
    for (double v : out.values()) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(InjectNoise, MonteCarloMean) {
  const ProbVector p{0.7, 0.2, 0.1};
  const std::vector<double> alpha{0.5, 2.0, 3.5};
  const double lambda = 0.3;
  const int n = 10000;
  Rng rng(123);
  std::vector<double> sum(3), sumsq(3);
  for (int t = 0; t < n; ++t) {
    const auto out = inject_noise(p, lambda, alpha, rng);
    for (int i = 0; i < 3; ++i) {
      sum[i] += out[i];
      sumsq[i] += out[i] * out[i];
    }
  }
  for (int i = 0; i < 3; ++i) {
    const double mean = sum[i] / n;
    const double sd = std::sqrt(sumsq[i] / n - mean * mean);
    const double expected = lambda * p[i] + (1 - lambda) * alpha[i] / 6.0;
    EXPECT_LE(std::abs(mean - expected), 3 * sd / std::sqrt(n)) << i;
  }
}

TEST(Split, ExactSizes) {
  SynthConfig cfg;
  cfg.num_examples = 1000;
  auto ds = generate_synthetic(cfg);
  split(ds, {0.8, 0.1, 0.1}, 4);
  EXPECT_EQ(ds.count(Split::kTrain), 800u);
  EXPECT_EQ(ds.count(Split::kVal), 100u);
  EXPECT_EQ(ds.count(Split::kTest), 100u);
  EXPECT_EQ(ds.count(Split::kUnassigned), 0u);
}

TEST(Split, SameSeedSameAssignment) {
  SynthConfig cfg;
  cfg.num_examples = 300;
  auto a = generate_synthetic(cfg);
  auto b = a;
  auto c = a;
  split(a, {0.6, 0.2, 0.2}, 17);
  split(b, {0.6, 0.2, 0.2}, 17);
  split(c, {0.6, 0.2, 0.2}, 18);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Split, StratifiedWithinTwo) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    MultimodalDataset ds;
    ds.num_classes = 2 + trial % 5;
    ds.num_modalities = 1;
    ds.dims = {1};
    ds.kinds = {ModalityKind::kFeatures};
    const std::size_t n = 50 + 37 * static_cast<std::size_t>(trial);
    std::vector<std::size_t> per_class(ds.num_classes, 3);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t y = i < 3 * ds.num_classes ? i % ds.num_classes
                                              : std::min<std::size_t>(ds.num_classes - 1, static_cast<std::size_t>(std::floor(std::pow(sample_uniform(rng), 2) * ds.num_classes)));
      ds.examples.push_back({{FeatureVector{0.0}}, y, Split::kUnassigned});
    }
    const std::array<double, 3> f{0.7, 0.15, 0.15};
    split(ds, f, static_cast<std::uint64_t>(trial));
    std::vector<std::array<double, 4>> counts(ds.num_classes);
    for (const auto& ex : ds.examples) counts[ex.label][static_cast<int>(ex.split)] += 1;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      const double nc = counts[c][1] + counts[c][2] + counts[c][3];
      EXPECT_EQ(counts[c][0], 0);
      for (int s = 0; s < 3; ++s) EXPECT_LE(std::abs(counts[c][s + 1] - nc * f[s]), 2.0) << trial << " " << c << " " << s;
    }
    EXPECT_GT(ds.count(Split::kVal), 0u);
  }
}

TEST(Split, DegenerateFractionsThrow) {
  SynthConfig cfg;
  cfg.num_examples = 10;
  auto ds = generate_synthetic(cfg);
  EXPECT_THROW(split(ds, {0.5, 0.5, 0.0}, 1), ContractError);
  EXPECT_THROW(split(ds, {0.5, 0.4, 0.2}, 1), ContractError);
  EXPECT_THROW(split(ds, {0.98, 0.01, 0.01}, 1), ContractError);
}

TEST(Storage, RoundTrip) {
  TempDir dir;
  auto ds = small_prob_dataset();
  save_dataset(ds, dir / "d.jsonl");
  EXPECT_EQ(load_dataset(dir / "d.jsonl"), ds);

  SynthConfig cfg;
  cfg.num_examples = 50;
  cfg.dims = {3, 1};
  auto synth = generate_synthetic(cfg);
  split(synth, {0.6, 0.2, 0.2}, 1);
  save_dataset(synth, dir / "s.jsonl");
  EXPECT_EQ(load_dataset(dir / "s.jsonl"), synth);
}

class StorageRejects : public ::testing::Test {
 protected:
  void write(const std::string& body) {
    std::ofstream(dir_ / "bad.jsonl") << body;
  }
  std::string error_message() {
    try {
      load_dataset(dir_ / "bad.jsonl");
    } catch (const FormatError& e) {
      return e.what();
    }
    return "<no error>";
  }
  static constexpr const char* kHeader =
      R"({"schema_version":1,"K":2,"M":2,"dims":[2,3],"kinds":["probs","features"]})"
      "\n";
  TempDir dir_;
};

TEST_F(StorageRejects, ProbsOffSimplexNamesLine) {
  write(std::string(kHeader) + R"({"label":0,"modalities":[{"probs":[0.5,0.5]},{"features":[1,2,3]}]})" + "\n" +
        R"({"label":1,"modalities":[{"probs":[0.5,0.6]},{"features":[1,2,3]}]})" + "\n");
  EXPECT_NE(error_message().find(":3:"), std::string::npos) << error_message();
}

TEST_F(StorageRejects, MissingModality) {
  write(std::string(kHeader) + R"({"label":0,"modalities":[{"probs":[0.5,0.5]}]})" + "\n");
  EXPECT_NE(error_message().find(":2:"), std::string::npos) << error_message();
}

TEST_F(StorageRejects, RaggedFeatures) {
  write(std::string(kHeader) + R"({"label":0,"modalities":[{"probs":[0.5,0.5]},{"features":[1,2]}]})" + "\n");
  EXPECT_NE(error_message().find(":2:"), std::string::npos);
}

TEST_F(StorageRejects, LabelOutOfRange) {
  write(std::string(kHeader) + R"({"label":2,"modalities":[{"probs":[0.5,0.5]},{"features":[1,2,3]}]})" + "\n");
  EXPECT_NE(error_message().find(":2:"), std::string::npos);
}

TEST_F(StorageRejects, WrongKindAndSchema) {
  write(std::string(kHeader) + R"({"label":0,"modalities":[{"features":[0.5,0.5]},{"features":[1,2,3]}]})" + "\n");
  EXPECT_NE(error_message().find(":2:"), std::string::npos);
  write(R"({"schema_version":99,"K":2,"M":1,"dims":[2],"kinds":["probs"]})" "\n");
  EXPECT_NE(error_message().find(":1:"), std::string::npos);
  write("not json\n");
  EXPECT_NE(error_message().find(":1:"), std::string::npos);
}

TEST(Storage, MissingFileIsIoError) { EXPECT_THROW(load_dataset("/nonexistent/credfuse.jsonl"), IoError); }

TEST(Storage, SlightlyOffSimplexIsRenormalized) {
  TempDir dir;
  std::ofstream(dir / "d.jsonl") << R"({"schema_version":1,"K":2,"M":1,"dims":[2],"kinds":["probs"]})" "\n"
                                 << R"({"label":0,"modalities":[{"probs":[0.500004,0.5]}]})" "\n";
  const auto ds = load_dataset(dir / "d.jsonl");
  const auto& p = std::get<ProbVector>(ds.examples[0].modalities[0]);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

TEST(Csv, ColumnsAndPrecision) {
  TempDir dir;
  MultimodalDataset ds;
  ds.num_classes = 2;
  ds.num_modalities = 2;
  ds.dims = {2, 2};
  ds.kinds = {ModalityKind::kProbs, ModalityKind::kProbs};
  const double third = 1.0 / 3.0;
  ds.examples.push_back({{ProbVector{third, 1 - third}, ProbVector{0.25, 0.75}}, 1, Split::kUnassigned});
  export_csv(ds, dir / "d.csv");
  std::ifstream in(dir / "d.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "label,m1_p0,m1_p1,m2_p0,m2_p1");
  std::stringstream ss(row);
  std::string cell;
  std::vector<std::string> cells;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  ASSERT_EQ(cells.size(), 5u);
  EXPECT_EQ(cells[0], "1");
  EXPECT_EQ(std::stod(cells[1]), third);
  EXPECT_EQ(std::stod(cells[2]), 1 - third);
  EXPECT_EQ(std::stod(cells[4]), 0.75);
}

TEST(Csv, RequiresProbabilities) {
  TempDir dir;
  EXPECT_THROW(export_csv(small_prob_dataset(), dir / "x.csv"), ContractError);
}

TEST(SplitNames, ParseAndPrint) {
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) EXPECT_EQ(parse_split(split_name(s)), s);
  EXPECT_THROW(parse_split("validation"), UsageError);
}

}  // namespace
}  // namespace credfuse
