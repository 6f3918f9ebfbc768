#include <gtest/gtest.h>

#include <cmath>

#include "dmvae/checks.hpp"
#include "dmvae/model.hpp"

using namespace dmvae;

namespace {

ModelConfig small(SharedKind kind = SharedKind::discrete) {
  ModelConfig c;
  c.image_dim = 6;
  c.label_classes = 3;
  c.private_dim = 2;
  c.shared_kind = kind;
  c.shared_dim = 3;
  c.hidden_dim = 5;
  return c;
}

data::BimodalBatch batch_of(std::vector<bool> paired) {
  const std::size_t b = paired.size();
  std::vector<double> img(b * 6), lab(b * 3, 0.0);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::fmod(0.37 * static_cast<double>(i), 1.0);
  for (std::size_t i = 0; i < b; ++i) lab[i * 3 + i % 3] = 1.0;
  return {Tensor({b, 6}, img), Tensor({b, 3}, lab), std::move(paired)};
}

}  // namespace

TEST(Model, ZeroNetwork) {
  const Model m = Model::zeros(small());
  const auto enc = m.encode_image(Tensor::full({4, 6}, 0.3));
  EXPECT_EQ(enc.private_params.mu().to_vector(), std::vector<double>(8, 0.0));
  EXPECT_EQ(enc.private_params.logvar().to_vector(), std::vector<double>(8, 0.0));
  const auto& logits = std::get<dist::ConcreteParams>(enc.shared).logits();
  EXPECT_EQ(logits.shape(), (Shape{4, 1, 3}));
  EXPECT_EQ(logits.to_vector(), std::vector<double>(12, 0.0));
  const auto lab = std::get<dist::ConcreteParams>(m.encode_label(Tensor({1, 3}, {0, 1, 0})));
  EXPECT_EQ(lab.logits().to_vector(), std::vector<double>(3, 0.0));
  EXPECT_EQ(m.decode_image(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})).to_vector(), std::vector<double>(12, 0.5));
  EXPECT_EQ(m.decode_label(Tensor::zeros({2, 3})).to_vector(), std::vector<double>(6, 0.5));
}

TEST(Model, HandcraftedAffineOutputs) {
  ModelConfig c;
  c.image_dim = 2;
  c.label_classes = 2;
  c.private_dim = 1;
  c.shared_dim = 2;
  c.hidden_dim = 2;
  Model m = Model::zeros(c);
  // Hidden: identity; output rows map h -> [mu, logvar, l0, l1].
  m.set_parameter(m.enc_image_hidden.weight, Tensor::matrix({{1, 0}, {0, 1}}));
  m.set_parameter(m.enc_image_hidden.bias, Tensor::vector({0, -1}));
  m.set_parameter(m.enc_image_out.weight, Tensor::matrix({{1, 2, 0, 1}, {3, 0, 1, 0}}));
  m.set_parameter(m.enc_image_out.bias, Tensor::vector({0.5, 0, 0, 0}));
  const auto enc = m.encode_image(Tensor::matrix({{2, 4}}));
  // h = relu([2, 3]) = [2, 3]; out = [2 + 9 + 0.5, 4, 3, 2].
  EXPECT_DOUBLE_EQ(enc.private_params.mu().item(), 11.5);
  EXPECT_DOUBLE_EQ(enc.private_params.logvar().item(), 4.0);
  EXPECT_EQ(std::get<dist::ConcreteParams>(enc.shared).logits().to_vector(), (std::vector<double>{3, 2}));

  m.set_parameter(m.dec_label_hidden.weight, Tensor::matrix({{1, 0}, {0, 1}}));
  m.set_parameter(m.dec_label_out.weight, Tensor::matrix({{2, 0}, {0, -1}}));
  const Tensor y = m.decode_label(Tensor::matrix({{0.25, 0.75}}));
  EXPECT_NEAR(y[0], 1.0 / (1.0 + std::exp(-0.5)), 1e-15);
  EXPECT_NEAR(y[1], 1.0 / (1.0 + std::exp(0.75)), 1e-15);
}

TEST(Model, LabelEncoderIsPermutationEquivariant) {
  ModelConfig c = small();
  c.hidden_dim = 3;
  Model m = Model::zeros(c);
  // Identity-style fixture: hidden = label, logits = 2 * hidden.
  m.set_parameter(m.enc_label_hidden.weight, Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  m.set_parameter(m.enc_label_out.weight, Tensor::matrix({{2, 0, 0}, {0, 2, 0}, {0, 0, 2}}));
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> onehot(3, 0.0);
    onehot[k] = 1.0;
    const auto l = std::get<dist::ConcreteParams>(m.encode_label(Tensor({1, 3}, onehot))).logits();
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(l[j], j == k ? 2.0 : 0.0);
  }
  EXPECT_THROW(m.encode_label(Tensor({1, 3}, {1, 1, 0})), std::invalid_argument);
}

TEST(Model, Shapes) {
  ModelConfig c;
  Engine e(1);
  const Model m(c, e);
  for (std::size_t b : {1u, 7u}) {
    const auto enc = m.encode_image(Tensor::full({b, 784}, 0.5));
    EXPECT_EQ(enc.private_params.mu().shape(), (Shape{b, 10}));
    EXPECT_EQ(enc.private_params.logvar().shape(), (Shape{b, 10}));
    EXPECT_EQ(std::get<dist::ConcreteParams>(enc.shared).logits().shape(), (Shape{b, 1, 10}));
    EXPECT_EQ(m.decode_image(Tensor::zeros({b, 10}), Tensor::zeros({b, 10})).shape(), (Shape{b, 784}));
    EXPECT_EQ(m.decode_label(Tensor::zeros({b, 10})).shape(), (Shape{b, 10}));
  }
  EXPECT_THROW(m.encode_image(Tensor::zeros({2, 783})), ShapeError);
}

TEST(Model, FuseShared) {
  const Model d = Model::zeros(small());
  const SharedParams one = dist::ConcreteParams(Tensor({1, 1, 3}, {0.1, 0.5, -0.2}), 0.66);
  const auto fused = std::get<dist::ConcreteParams>(d.fuse_shared(std::span(&one, 1)));
  const Tensor a = fused.probs(), b = std::get<dist::ConcreteParams>(one).probs();
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-15);

  const std::vector<SharedParams> two{dist::ConcreteParams(Tensor({1, 1, 2}, {std::log(4.0), std::log(3.0)}), 0.66),
                                      dist::ConcreteParams(Tensor({1, 1, 2}, {std::log(2.0), std::log(3.0)}), 0.66)};
  ModelConfig c2 = small();
  c2.label_classes = c2.shared_dim = 2;
  const Tensor p = std::get<dist::ConcreteParams>(Model::zeros(c2).fuse_shared(two)).probs();
  EXPECT_NEAR(p[0], 8.0 / 17.0, 1e-15);

  const Model g = Model::zeros(small(SharedKind::continuous));
  const SharedParams ge = dist::GaussianParams(Tensor({1, 1}, {1.0}), Tensor({1, 1}, {0.0}));
  const auto gf = std::get<dist::GaussianParams>(g.fuse_shared(std::span(&ge, 1)));
  EXPECT_NEAR(gf.mu().item(), 0.5, 1e-15);
  EXPECT_NEAR(std::exp(gf.logvar().item()), 0.5, 1e-15);
}

TEST(Model, ForwardUnpairedHasNoBimodalEntries) {
  Engine e(3);
  const Model m(small(), e);
  Engine g1(1), g2(2);
  EngineNoise noise(g1, g2);
  const auto b = m.forward_train(batch_of({false, false, false}), noise);
  EXPECT_FALSE(b.has_pairs());
  EXPECT_FALSE(b.fused_joint.has_value());
  EXPECT_FALSE(b.shared_label.has_value());
  EXPECT_EQ(b.recon_image_self.shape(), (Shape{3, 6}));
}

TEST(Model, ForwardPairedMatchesDirectFusion) {
  Engine e(3);
  const Model m(small(), e);
  Engine g1(1), g2(2);
  EngineNoise noise(g1, g2);
  const auto batch = batch_of({true, true});
  const auto b = m.forward_train(batch, noise);
  ASSERT_TRUE(b.has_pairs());
  EXPECT_EQ(b.recon_label_self.shape(), (Shape{2, 3}));
  EXPECT_EQ(b.recon_image_joint.shape(), (Shape{2, 6}));
  EXPECT_EQ(b.recon_label_cross.shape(), (Shape{2, 3}));
  const std::vector<SharedParams> experts{m.encode_image(batch.images).shared, m.encode_label(batch.labels)};
  const auto direct = std::get<dist::ConcreteParams>(m.fuse_shared(experts)).logits();
  EXPECT_EQ(std::get<dist::ConcreteParams>(*b.fused_joint).logits().to_vector(), direct.to_vector());
}

TEST(Model, ForwardIsPure) {
  Engine e(5);
  const Model m(small(SharedKind::continuous), e);
  const auto batch = batch_of({true, false, true});
  Engine a1(1), a2(2), b1(1), b2(2);
  EngineNoise na(a1, a2), nb(b1, b2);
  const auto x = m.forward_train(batch, na), y = m.forward_train(batch, nb);
  EXPECT_EQ(x.recon_image_self.to_vector(), y.recon_image_self.to_vector());
  EXPECT_EQ(x.recon_label_joint.to_vector(), y.recon_label_joint.to_vector());
  EXPECT_EQ(x.recon_image_cross.to_vector(), y.recon_image_cross.to_vector());
}

TEST(Model, DiscreteNeedsMatchingWidth) {
  ModelConfig c = small();
  c.shared_dim = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Suites, Structure) {
  const auto r = checks::structure_suite();
  EXPECT_TRUE(r.passed) << r.detail;
}
