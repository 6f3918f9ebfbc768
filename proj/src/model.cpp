#include "dmvae/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dmvae {

const char* to_string(SharedKind kind) {
  return kind == SharedKind::continuous ? "continuous" : "discrete";
}

const char* to_string(LabelMode mode) { return mode == LabelMode::single ? "single" : "multilabel"; }

SharedKind parse_shared_kind(const std::string& s) {
  if (s == "continuous") return SharedKind::continuous;
  if (s == "discrete") return SharedKind::discrete;
  throw std::invalid_argument("shared kind must be 'continuous' or 'discrete', got '" + s + "'");
}

LabelMode parse_label_mode(const std::string& s) {
  if (s == "single") return LabelMode::single;
  if (s == "multilabel") return LabelMode::multilabel;
  throw std::invalid_argument("label mode must be 'single' or 'multilabel', got '" + s + "'");
}

void ModelConfig::validate() const {
  if (image_dim == 0 || label_classes == 0 || private_dim == 0 || shared_dim == 0 || hidden_dim == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (shared_kind == SharedKind::discrete && shared_dim != label_classes)
    throw std::invalid_argument("discrete shared space needs shared_dim == label_classes (" +
                                std::to_string(shared_dim) + " vs " + std::to_string(label_classes) + ")");
}

std::size_t ModelConfig::shared_groups() const { return label_mode == LabelMode::single ? 1 : label_classes; }

std::size_t ModelConfig::shared_categories() const {
  return label_mode == LabelMode::single ? label_classes : 2;
}

std::size_t ModelConfig::shared_width() const {
  return shared_kind == SharedKind::continuous ? shared_dim : shared_groups() * shared_categories();
}

std::size_t ModelConfig::shared_head_width() const {
  return shared_kind == SharedKind::continuous ? 2 * shared_dim : shared_width();
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto add_layer = [this](const std::string& name, std::size_t in, std::size_t out) {
    Linear layer{params_.size(), params_.size() + 1};
    params_.push_back(Tensor::zeros({in, out}));
    names_.push_back(name + ".weight");
    params_.push_back(Tensor::zeros({out}));
    names_.push_back(name + ".bias");
    return layer;
  };
  const auto& c = config_;
  const auto h = c.hidden_dim;
  enc_image_hidden = add_layer("enc_image.hidden", c.image_dim, h);
  enc_image_out = add_layer("enc_image.out", h, 2 * c.private_dim + c.shared_head_width());
  enc_label_hidden = add_layer("enc_label.hidden", c.label_classes, h);
  enc_label_out = add_layer("enc_label.out", h, c.shared_head_width());
  dec_image_hidden = add_layer("dec_image.hidden", c.private_dim + c.shared_width(), h);
  dec_image_out = add_layer("dec_image.out", h, c.image_dim);
  dec_label_hidden = add_layer("dec_label.hidden", c.shared_width(), h);
  dec_label_out = add_layer("dec_label.out", h, c.label_classes);
}

Model::Model(const ModelConfig& config, Engine& engine) : Model(config) {
  EngineNoise uniform(engine, engine);
  for (std::size_t i = 0; i < params_.size(); i += 2) {
    const auto fan_in = params_[i].dim(0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t k : {i, i + 1}) {
      const Tensor u = uniform.uniform(params_[k].shape());
      std::vector<double> v(u.numel());
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = (2.0 * u[j] - 1.0) * bound;
      params_[k] = Tensor(params_[k].shape(), std::move(v));
    }
  }
}

Model Model::zeros(const ModelConfig& config) { return Model(config); }

void Model::set_parameters(std::vector<Tensor> params) {
  if (params.size() != params_.size())
    throw std::invalid_argument("set_parameters: expected " + std::to_string(params_.size()) + " tensors");
  for (std::size_t i = 0; i < params.size(); ++i) set_parameter(i, std::move(params[i]));
}

void Model::set_parameter(std::size_t i, Tensor value) {
  if (value.shape() != params_.at(i).shape())
    throw ShapeError("parameter " + names_[i] + ": expected " + to_string(params_[i].shape()) + ", got " +
                     to_string(value.shape()));
  params_[i] = value.detach();
}

Model Model::watched(Tape& tape) const {
  Model copy = *this;
  for (auto& p : copy.params_) p = tape.watch(p);
  return copy;
}

Model Model::with_parameters(std::span<const Tensor> params) const {
  if (params.size() != params_.size())
    throw std::invalid_argument("with_parameters: expected " + std::to_string(params_.size()) + " tensors");
  Model copy = *this;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != params_[i].shape())
      throw ShapeError("parameter " + names_[i] + ": expected " + to_string(params_[i].shape()) + ", got " +
                       to_string(params[i].shape()));
    copy.params_[i] = params[i];
  }
  return copy;
}

Tensor Model::apply(const Linear& layer, const Tensor& x) const {
  return matmul(x, params_[layer.weight]) + params_[layer.bias];
}

SharedParams Model::shared_from_head(const Tensor& head) const {
  const auto b = head.dim(0);
  if (config_.shared_kind == SharedKind::continuous) {
    const auto s = config_.shared_dim;
    return dist::GaussianParams(slice(head, 0, s), slice(head, s, 2 * s));
  }
  return dist::ConcreteParams(reshape(head, {b, config_.shared_groups(), config_.shared_categories()}),
                              config_.temperature);
}

ImageEncoding Model::encode_image(const Tensor& images) const {
  if (images.rank() != 2 || images.dim(1) != config_.image_dim)
    throw ShapeError("encode_image: expected [B, " + std::to_string(config_.image_dim) + "], got " +
                     to_string(images.shape()));
  const auto p = config_.private_dim;
  const Tensor hidden = relu(apply(enc_image_hidden, images));
  const Tensor out = apply(enc_image_out, hidden);
  return {dist::GaussianParams(slice(out, 0, p), slice(out, p, 2 * p)),
          shared_from_head(slice(out, 2 * p, 2 * p + config_.shared_head_width()))};
}

SharedParams Model::encode_label(const Tensor& labels) const {
  if (labels.rank() != 2 || labels.dim(1) != config_.label_classes)
    throw ShapeError("encode_label: expected [B, " + std::to_string(config_.label_classes) + "], got " +
                     to_string(labels.shape()));
  const auto d = labels.data();
  const auto n = config_.label_classes;
  for (std::size_t r = 0; r < labels.dim(0); ++r) {
    double row_sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double v = d[r * n + c];
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("encode_label: row " + std::to_string(r) + " has non-binary entry");
      row_sum += v;
    }
    if (config_.label_mode == LabelMode::single && row_sum != 1.0)
      throw std::invalid_argument("encode_label: row " + std::to_string(r) + " is not one-hot");
  }
  const Tensor hidden = relu(apply(enc_label_hidden, labels));
  return shared_from_head(apply(enc_label_out, hidden));
}

SharedParams Model::fuse_shared(std::span<const SharedParams> experts) const {
  if (experts.empty()) throw std::invalid_argument("fuse_shared: no experts available");
  if (config_.shared_kind == SharedKind::continuous) {
    std::vector<dist::GaussianParams> g;
    for (const auto& e : experts) g.push_back(std::get<dist::GaussianParams>(e));
    return dist::poe_gaussian(g, /*include_standard_prior=*/true);
  }
  std::vector<dist::ConcreteParams> c;
  for (const auto& e : experts) c.push_back(std::get<dist::ConcreteParams>(e));
  return dist::poe_concrete(c);
}

Tensor Model::decode_image(const Tensor& z_private, const Tensor& z_shared) const {
  if (z_private.rank() != 2 || z_shared.rank() != 2 || z_private.dim(1) != config_.private_dim ||
      z_shared.dim(1) != config_.shared_width() || z_private.dim(0) != z_shared.dim(0))
    throw ShapeError("decode_image: latent widths " + to_string(z_private.shape()) + " + " +
                     to_string(z_shared.shape()) + " do not match decoder input " +
                     std::to_string(config_.private_dim) + " + " + std::to_string(config_.shared_width()));
  const Tensor hidden = relu(apply(dec_image_hidden, concat({z_private, z_shared})));
  return sigmoid(apply(dec_image_out, hidden));
}

Tensor Model::decode_label(const Tensor& z_shared) const {
  if (z_shared.rank() != 2 || z_shared.dim(1) != config_.shared_width())
    throw ShapeError("decode_label: expected [B, " + std::to_string(config_.shared_width()) + "], got " +
                     to_string(z_shared.shape()));
  const Tensor hidden = relu(apply(dec_label_hidden, z_shared));
  return sigmoid(apply(dec_label_out, hidden));
}

Model::SharedDraw Model::draw_shared(const SharedParams& params, NoiseSource& noise) const {
  if (const auto* g = std::get_if<dist::GaussianParams>(&params))
    return {dist::gaussian_sample(*g, noise.normal(g->mu().shape())), Tensor()};
  const auto& c = std::get<dist::ConcreteParams>(params);
  const Tensor gumbels = dist::gumbel_from_uniform(noise.uniform(c.logits().shape()));
  const dist::SimplexPoint z = dist::concrete_sample(c, gumbels);
  return {flatten_rows(z.coords), flatten_rows(*z.log_coords)};
}

Tensor Model::sample_shared(const SharedParams& params, NoiseSource& noise) const {
  return draw_shared(params, noise).sample;
}

Tensor Model::shared_mean(const SharedParams& params) const {
  if (const auto* g = std::get_if<dist::GaussianParams>(&params)) return g->mu();
  return flatten_rows(std::get<dist::ConcreteParams>(params).probs());
}

namespace {

SharedParams take_rows(const SharedParams& params, std::span<const std::size_t> rows) {
  if (const auto* g = std::get_if<dist::GaussianParams>(&params))
    return dist::GaussianParams(dmvae::take_rows(g->mu(), rows), dmvae::take_rows(g->logvar(), rows));
  const auto& c = std::get<dist::ConcreteParams>(params);
  return dist::ConcreteParams(dmvae::take_rows(c.logits(), rows), c.temperature());
}

}  // namespace

LatentBundle Model::forward_train(const data::BimodalBatch& batch, NoiseSource& noise) const {
  const auto b = batch.size();
  if (batch.images.dim(0) != b || batch.labels.dim(0) != b)
    throw ShapeError("forward_train: batch tensors disagree with pairing mask length");

  LatentBundle out;
  out.kind = config_.shared_kind;
  out.paired_rows = batch.paired_rows();

  const ImageEncoding enc = encode_image(batch.images);
  out.private_params = enc.private_params;
  out.private_sample = dist::gaussian_sample(enc.private_params, noise.normal({b, config_.private_dim}));
  out.shared_image = enc.shared;
  out.fused_image = fuse_shared(std::span(&enc.shared, 1));
  auto draw = draw_shared(*out.fused_image, noise);
  out.shared_sample_image = draw.sample;
  out.shared_log_sample_image = draw.log_sample;
  out.recon_image_self = decode_image(out.private_sample, out.shared_sample_image);

  if (!out.has_pairs()) return out;
  const auto& rows = out.paired_rows;
  const auto np = rows.size();

  const Tensor labels = dmvae::take_rows(batch.labels, rows);
  out.shared_label = encode_label(labels);
  out.fused_label = fuse_shared(std::span(&*out.shared_label, 1));
  draw = draw_shared(*out.fused_label, noise);
  out.shared_sample_label = draw.sample;
  out.shared_log_sample_label = draw.log_sample;
  out.recon_label_self = decode_label(out.shared_sample_label);

  const std::vector<SharedParams> experts{take_rows(enc.shared, rows), *out.shared_label};
  out.fused_joint = fuse_shared(experts);
  draw = draw_shared(*out.fused_joint, noise);
  out.shared_sample_joint = draw.sample;
  out.shared_log_sample_joint = draw.log_sample;
  out.recon_image_joint = decode_image(dmvae::take_rows(out.private_sample, rows), out.shared_sample_joint);
  out.recon_label_joint = decode_label(out.shared_sample_joint);

  out.cross_private_sample = noise.normal({np, config_.private_dim});
  out.recon_image_cross = decode_image(out.cross_private_sample, out.shared_sample_label);
  out.recon_label_cross = decode_label(dmvae::take_rows(out.shared_sample_image, rows));
  return out;
}

Tensor flatten_rows(const Tensor& t) {
  if (t.rank() == 2) return t;
  return reshape(t, {t.dim(0), t.numel() / t.dim(0)});
}

}  // namespace dmvae
