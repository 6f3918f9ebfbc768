#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmvae/checkpoint.hpp"
#include "dmvae/config.hpp"
#include "dmvae/eval.hpp"

using namespace dmvae;
using namespace dmvae::eval;

namespace {

Tensor identity(std::size_t n, double scale = 1.0) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = scale;
  return Tensor({n, n}, std::move(v));
}

// Images are one-hot class indicators. The image encoder emits shared logits
// 10 * one-hot(c); the label decoder maps each one-hot code back to itself.
Model stub_model(std::size_t n) {
  ModelConfig c;
  c.image_dim = n;
  c.label_classes = n;
  c.private_dim = 2;
  c.shared_dim = n;
  c.hidden_dim = n;
  Model m = Model::zeros(c);
  m.set_parameter(m.enc_image_hidden.weight, identity(n));
  std::vector<double> out(n * (4 + n), 0.0);
  for (std::size_t i = 0; i < n; ++i) out[i * (4 + n) + 4 + i] = 10.0;
  m.set_parameter(m.enc_image_out.weight, Tensor({n, 4 + n}, out));
  m.set_parameter(m.dec_label_hidden.weight, identity(n));
  m.set_parameter(m.dec_label_out.weight, identity(n, 10.0));
  m.set_parameter(m.dec_label_out.bias, Tensor::full({n}, -5.0));
  return m;
}

Tensor one_hot_rows(const std::vector<std::size_t>& classes, std::size_t n) {
  std::vector<double> v(classes.size() * n, 0.0);
  for (std::size_t i = 0; i < classes.size(); ++i) v[i * n + classes[i]] = 1.0;
  return Tensor({classes.size(), n}, std::move(v));
}

}  // namespace

TEST(Classify, StubPredictsItsClass) {
  const Model m = stub_model(5);
  const std::vector<std::size_t> cls{3, 0, 4, 1, 2, 2};
  const Predictions p = classify_cross_modal(m, one_hot_rows(cls, 5));
  for (std::size_t i = 0; i < cls.size(); ++i) EXPECT_EQ(p.values[i], static_cast<int>(cls[i]));
}

TEST(Classify, TiesGoToLowestIndex) {
  const Model m = stub_model(4);
  EXPECT_EQ(shared_mode(m, Tensor::zeros({1, 4})).to_vector(), (std::vector<double>{1, 0, 0, 0}));
  EXPECT_EQ(classify_cross_modal(m, Tensor::zeros({2, 4})).values, (std::vector<int>{0, 0}));
}

TEST(Score, Perfect) {
  const Predictions t{LabelMode::single, 3, {0, 1, 2, 2}};
  const EvalReport r = score(t, t);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.f1_macro, 1.0);
}

TEST(Score, ConstantPredictionOnBalancedSet) {
  Predictions truth{LabelMode::single, 10, {}}, pred{LabelMode::single, 10, {}};
  for (int i = 0; i < 100; ++i) {
    truth.values.push_back(i % 10);
    pred.values.push_back(3);
  }
  const EvalReport r = score(pred, truth);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.1);
  EXPECT_EQ(r.true_positive[3], 10u);
  EXPECT_EQ(r.false_positive[3], 90u);
  EXPECT_EQ(r.false_negative[0], 10u);
}

TEST(Score, MultilabelMacroF1) {
  // Attribute A: TP=1, FP=1, FN=0. Attribute B: perfect.
  const Predictions pred{LabelMode::multilabel, 2, {1, 0, 1, 1}};
  const Predictions truth{LabelMode::multilabel, 2, {1, 0, 0, 1}};
  const EvalReport r = score(pred, truth);
  EXPECT_NEAR(r.f1(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.f1(1), 1.0, 1e-15);
  EXPECT_NEAR(r.f1_macro, 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(r.accuracy, 0.75, 1e-15);
}

TEST(Score, LayoutMismatch) {
  EXPECT_THROW(score(Predictions{LabelMode::single, 3, {0}}, Predictions{LabelMode::single, 3, {0, 1}}),
               std::invalid_argument);
}

TEST(Traversal, Layout) {
  ModelConfig c;
  c.image_dim = 16;
  c.label_classes = 10;
  c.shared_dim = 10;
  c.hidden_dim = 8;
  Engine e(1);
  const Model m(c, e);
  std::vector<double> src(4 * 16);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = static_cast<double>((i * 7) % 16) / 16.0;
  std::copy(src.begin() + 16, src.begin() + 32, src.begin() + 48);  // row 3 repeats row 1
  const GrayImage g = render_traversal(m, Tensor({4, 16}, src));
  EXPECT_EQ(g.width, 12u * 4u);
  EXPECT_EQ(g.height, 4u * 4u);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < g.width; ++x)
      EXPECT_EQ(g.pixels[(4 + y) * g.width + x], g.pixels[(12 + y) * g.width + x]);
}

TEST(Traversal, QuantizationRoundsHalfToEven) {
  EXPECT_EQ(quantize(0.0), 0);
  EXPECT_EQ(quantize(1.0), 255);
  EXPECT_EQ(quantize(0.25), 64);   // 63.75
  EXPECT_EQ(quantize(0.75), 191);  // 191.25
  EXPECT_EQ(quantize(0.5), 128);   // 127.5, even neighbour
  int exact_halves = 0;
  for (int k = 0; k < 255; ++k) {
    const double p = (k + 0.5) / 255.0;
    if (p * 255.0 != k + 0.5) continue;
    ++exact_halves;
    EXPECT_EQ(quantize(p), k % 2 == 0 ? k : k + 1) << "k=" << k;
  }
  EXPECT_GT(exact_halves, 10);
}

TEST(Traversal, PgmFile) {
  const auto path = std::filesystem::temp_directory_path() / "dmvae_test.pgm";
  write_pgm(path, GrayImage{3, 2, {0, 1, 2, 3, 4, 5}});
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  EXPECT_EQ(buf.str(), std::string("P5\n3 2\n255\n") + std::string("\x00\x01\x02\x03\x04\x05", 6));
  std::filesystem::remove(path);
}

TEST(Embeddings, CsvRoundTrip) {
  ModelConfig c;
  c.image_dim = 16;
  Engine e(2);
  const Model m(c, e);
  const data::Dataset ds = data::synth_bimodal(10, 10, 0).head(3);
  const auto path = std::filesystem::temp_directory_path() / "dmvae_test_embed.csv";
  export_embeddings(m, ds, path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  const auto header = embedding_header(c);
  ASSERT_EQ(header.size(), 22u);
  std::string joined;
  for (const auto& h : header) joined += (joined.empty() ? "" : ",") + h;
  EXPECT_EQ(line, joined);

  NoGradScope off;
  const auto enc = m.encode_image(Tensor({3, 16}, ds.images));
  const auto& logits = std::get<dist::ConcreteParams>(enc.shared).logits();
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::vector<double> v;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::stod(cell));
    ASSERT_EQ(v.size(), 22u);
    EXPECT_EQ(v[0], static_cast<double>(rows));
    EXPECT_EQ(v[1], ds.classes[rows]);
    for (std::size_t k = 0; k < 10; ++k) {
      EXPECT_NEAR(v[2 + k], enc.private_params.mu().at(rows, k), 1e-9);
      EXPECT_NEAR(v[12 + k], logits.data()[rows * 10 + k], 1e-9);
    }
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
  std::filesystem::remove(path);
}

TEST(Evaluate, DeterministicReports) {
  RunConfig c;
  c.dataset = "synth";
  c.synth_test = 300;
  const auto split = load_run_data(c);
  Engine e(3);
  const Model m(c.model_config(split.train.image_dim, split.train.label_dim), e);
  const auto a = format_report(evaluate(m, split.test, 64));
  const auto b = format_report(evaluate(m, split.test, 1000));
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("accuracy="), std::string::npos);
}

// Random initialization classifies MNIST at chance.
TEST(Evaluate, RandomInitMnistIsChance) {
  const char* dir = std::getenv("DMVAE_DATA_DIR");
  if (!dir || !std::filesystem::exists(std::filesystem::path(dir) / "t10k-images-idx3-ubyte"))
    GTEST_SKIP() << "DMVAE_DATA_DIR not set";
  const data::Dataset test = data::load_mnist(dir, "t10k", 0);
  ModelConfig c;
  Engine e(stream_seed(0, "weights"));
  const Model m(c, e);
  EXPECT_NEAR(evaluate(m, test).accuracy, 0.1, 0.05);
}
