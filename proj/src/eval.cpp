#include "dmvae/eval.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dmvae::eval {
namespace {

std::size_t first_argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One-hot (or per-attribute on/off) shared code for class c in decoder layout.
Tensor shared_code(const ModelConfig& config, std::size_t c, std::size_t rows) {
  const auto groups = config.shared_groups();
  const auto cats = config.shared_categories();
  std::vector<double> code(groups * cats, 0.0);
  if (groups == 1) {
    code[c] = 1.0;
  } else {
    for (std::size_t g = 0; g < groups; ++g) code[g * cats + (g == c ? 1 : 0)] = 1.0;
  }
  std::vector<double> out;
  out.reserve(rows * code.size());
  for (std::size_t r = 0; r < rows; ++r) out.insert(out.end(), code.begin(), code.end());
  return Tensor({rows, code.size()}, std::move(out));
}

std::size_t tile_side(std::size_t image_dim) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(image_dim))));
  if (side * side != image_dim)
    throw std::invalid_argument("traversal grid needs square images, image_dim = " + std::to_string(image_dim));
  return side;
}

}  // namespace

double EvalReport::f1(std::size_t c) const {
  const double denom = 2.0 * static_cast<double>(true_positive.at(c)) + static_cast<double>(false_positive.at(c)) +
                       static_cast<double>(false_negative.at(c));
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(true_positive[c]) / denom;
}

std::size_t Predictions::size() const {
  if (mode == LabelMode::single) return values.size();
  return classes == 0 ? 0 : values.size() / classes;
}

Tensor shared_mode(const Model& model, const Tensor& images) {
  NoGradScope no_grad;
  const auto& config = model.config();
  const ImageEncoding enc = model.encode_image(images);
  const SharedParams fused = model.fuse_shared(std::span(&enc.shared, 1));
  if (const auto* g = std::get_if<dist::GaussianParams>(&fused)) return g->mu().detach();

  const auto& logits = std::get<dist::ConcreteParams>(fused).logits();
  const auto groups = config.shared_groups();
  const auto cats = config.shared_categories();
  const auto b = images.dim(0);
  const auto s = logits.data();
  std::vector<double> code(b * groups * cats, 0.0);
  for (std::size_t rg = 0; rg < b * groups; ++rg) code[rg * cats + first_argmax(s.subspan(rg * cats, cats))] = 1.0;
  return Tensor({b, groups * cats}, std::move(code));
}

Tensor cross_modal_scores(const Model& model, const Tensor& images) {
  NoGradScope no_grad;
  return model.decode_label(shared_mode(model, images)).detach();
}

Predictions classify_cross_modal(const Model& model, const Tensor& images) {
  const auto& config = model.config();
  const Tensor scores = cross_modal_scores(model, images);
  const auto n = config.label_classes;
  Predictions out{config.label_mode, n, {}};
  const auto s = scores.data();
  for (std::size_t r = 0; r < images.dim(0); ++r) {
    const auto row = s.subspan(r * n, n);
    if (config.label_mode == LabelMode::single) {
      out.values.push_back(static_cast<int>(first_argmax(row)));
    } else {
      for (double p : row) out.values.push_back(p >= kMultilabelThreshold ? 1 : 0);
    }
  }
  return out;
}

Predictions truth_of(const data::Dataset& ds, LabelMode mode) {
  Predictions out{mode, ds.label_dim, {}};
  for (std::size_t i = 0; i < ds.count; ++i) {
    const auto row = ds.label(i);
    if (mode == LabelMode::single) {
      out.values.push_back(static_cast<int>(first_argmax(row)));
    } else {
      for (double v : row) out.values.push_back(v >= kMultilabelThreshold ? 1 : 0);
    }
  }
  return out;
}

EvalReport score(const Predictions& predicted, const Predictions& truth) {
  if (predicted.mode != truth.mode || predicted.classes != truth.classes)
    throw std::invalid_argument("score: prediction and truth layouts differ");
  if (predicted.values.size() != truth.values.size())
    throw std::invalid_argument("score: " + std::to_string(predicted.size()) + " predictions vs " +
                                std::to_string(truth.size()) + " labels");
  const auto n = truth.classes;
  EvalReport r;
  r.mode = truth.mode;
  r.n_samples = truth.size();
  r.true_positive.assign(n, 0);
  r.false_positive.assign(n, 0);
  r.false_negative.assign(n, 0);
  r.support.assign(n, 0);

  std::size_t correct = 0;
  if (truth.mode == LabelMode::single) {
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
      const auto p = static_cast<std::size_t>(predicted.values[i]);
      const auto t = static_cast<std::size_t>(truth.values[i]);
      if (p >= n || t >= n) throw std::invalid_argument("score: class index out of range");
      ++r.support[t];
      if (p == t) {
        ++correct;
        ++r.true_positive[t];
      } else {
        ++r.false_positive[p];
        ++r.false_negative[t];
      }
    }
  } else {
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
      const auto c = i % n;
      const bool p = predicted.values[i] != 0;
      const bool t = truth.values[i] != 0;
      if (t) ++r.support[c];
      if (p == t) ++correct;
      if (p && t) ++r.true_positive[c];
      if (p && !t) ++r.false_positive[c];
      if (!p && t) ++r.false_negative[c];
    }
  }
  const auto decisions = truth.values.size();
  r.accuracy = decisions == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(decisions);

  double f1_sum = 0.0;
  std::size_t active = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (r.true_positive[c] + r.false_positive[c] + r.false_negative[c] == 0) continue;
    f1_sum += r.f1(c);
    ++active;
  }
  r.f1_macro = active == 0 ? 0.0 : f1_sum / static_cast<double>(active);
  return r;
}

EvalReport evaluate(const Model& model, const data::Dataset& ds, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("evaluate: chunk must be positive");
  const auto mode = model.config().label_mode;
  Predictions all{mode, model.config().label_classes, {}};
  for (std::size_t begin = 0; begin < ds.count; begin += chunk) {
    const auto end = std::min(ds.count, begin + chunk);
    const auto images = std::span(ds.images).subspan(begin * ds.image_dim, (end - begin) * ds.image_dim);
    const Tensor batch({end - begin, ds.image_dim}, std::vector<double>(images.begin(), images.end()));
    const Predictions p = classify_cross_modal(model, batch);
    all.values.insert(all.values.end(), p.values.begin(), p.values.end());
  }
  return score(all, truth_of(ds, mode));
}

std::uint8_t quantize(double p) {
  const int old = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double v = std::nearbyint(std::clamp(p, 0.0, 1.0) * 255.0);
  std::fesetround(old);
  return static_cast<std::uint8_t>(v);
}

GrayImage render_traversal(const Model& model, const Tensor& style_sources) {
  const auto& config = model.config();
  if (config.shared_kind != SharedKind::discrete)
    throw std::invalid_argument("traversal grid needs a discrete shared space");
  if (style_sources.rank() != 2 || style_sources.dim(1) != config.image_dim)
    throw ShapeError("traversal grid: expected [R, " + std::to_string(config.image_dim) + "] images");
  const auto side = tile_side(config.image_dim);
  const auto rows = style_sources.dim(0);
  const auto n = config.label_classes;
  const auto cols = 2 + n;

  NoGradScope no_grad;
  const ImageEncoding enc = model.encode_image(style_sources);
  const Tensor z_private = enc.private_params.mu();

  // Tile contents, column by column: [rows, image_dim] each.
  std::vector<Tensor> columns;
  columns.push_back(style_sources);
  columns.push_back(model.decode_image(z_private, shared_mode(model, style_sources)));
  for (std::size_t c = 0; c < n; ++c) columns.push_back(model.decode_image(z_private, shared_code(config, c, rows)));

  GrayImage img;
  img.width = cols * side;
  img.height = rows * side;
  img.pixels.assign(img.width * img.height, 0);
  for (std::size_t col = 0; col < cols; ++col) {
    const auto values = columns[col].data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double p = values[r * config.image_dim + y * side + x];
          img.pixels[(r * side + y) * img.width + col * side + x] = quantize(p);
        }
      }
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void traversal_grid(const Model& model, const Tensor& style_sources, const std::filesystem::path& out_path) {
  write_pgm(out_path, render_traversal(model, style_sources));
}

std::vector<std::string> embedding_header(const ModelConfig& config) {
  std::vector<std::string> h{"index", "label"};
  for (std::size_t k = 0; k < config.private_dim; ++k) h.push_back("private_mu_" + std::to_string(k));
  if (config.shared_kind == SharedKind::discrete) {
    for (std::size_t k = 0; k < config.shared_width(); ++k) h.push_back("shared_logit_" + std::to_string(k));
  } else {
    for (std::size_t k = 0; k < config.shared_dim; ++k) h.push_back("shared_mu_" + std::to_string(k));
    for (std::size_t k = 0; k < config.shared_dim; ++k) h.push_back("shared_logvar_" + std::to_string(k));
  }
  return h;
}

void export_embeddings(const Model& model, const data::Dataset& ds, const std::filesystem::path& out_path,
                       LabelMode mode) {
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path.string());
  const auto header = embedding_header(model.config());
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';

  const Predictions truth = truth_of(ds, mode);
  constexpr std::size_t chunk = 1000;
  NoGradScope no_grad;
  for (std::size_t begin = 0; begin < ds.count; begin += chunk) {
    const auto end = std::min(ds.count, begin + chunk);
    const auto span = std::span(ds.images).subspan(begin * ds.image_dim, (end - begin) * ds.image_dim);
    const ImageEncoding enc =
        model.encode_image(Tensor({end - begin, ds.image_dim}, std::vector<double>(span.begin(), span.end())));
    std::vector<Tensor> shared;
    if (const auto* c = std::get_if<dist::ConcreteParams>(&enc.shared)) {
      shared.push_back(flatten_rows(c->logits()));
    } else {
      const auto& g = std::get<dist::GaussianParams>(enc.shared);
      shared.push_back(g.mu());
      shared.push_back(g.logvar());
    }
    for (std::size_t r = 0; r < end - begin; ++r) {
      const auto i = begin + r;
      out << i << ',';
      if (mode == LabelMode::single) {
        out << truth.values[i];
      } else {
        for (std::size_t k = 0; k < truth.classes; ++k) out << truth.values[i * truth.classes + k];
      }
      const auto& mu = enc.private_params.mu();
      for (std::size_t k = 0; k < mu.dim(1); ++k) out << ',' << format_double(mu.at(r, k));
      for (const auto& t : shared)
        for (std::size_t k = 0; k < t.dim(1); ++k) out << ',' << format_double(t.at(r, k));
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + out_path.string());
}

std::string format_report(const EvalReport& report, const std::map<std::string, std::string>& extra) {
  std::ostringstream out;
  out << "mode=" << to_string(report.mode) << '\n';
  out << "n_samples=" << report.n_samples << '\n';
  out << "accuracy=" << format_double(report.accuracy) << '\n';
  out << "f1_macro=" << format_double(report.f1_macro) << '\n';
  for (std::size_t c = 0; c < report.support.size(); ++c) {
    const auto p = "class." + std::to_string(c) + '.';
    out << p << "support=" << report.support[c] << '\n';
    out << p << "tp=" << report.true_positive[c] << '\n';
    out << p << "fp=" << report.false_positive[c] << '\n';
    out << p << "fn=" << report.false_negative[c] << '\n';
    out << p << "f1=" << format_double(report.f1(c)) << '\n';
  }
  for (const auto& [k, v] : extra) out << k << '=' << v << '\n';
  return out.str();
}

void write_report(const std::filesystem::path& path, const EvalReport& report,
                  const std::map<std::string, std::string>& extra) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_report(report, extra);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace dmvae::eval
