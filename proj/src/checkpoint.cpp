#include "dmvae/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dmvae {
namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw CheckpointError("checkpoint: bad number for " + key + ": '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw CheckpointError("checkpoint: bad integer for " + key + ": '" + s + "'");
  return v;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{in[pos + static_cast<std::size_t>(i)]} << (8 * i);
  return v;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

Shape parse_shape(const std::string& key, const std::string& s) {
  Shape shape;
  if (s == "scalar") return shape;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, 'x')) shape.push_back(parse_u64(key, part));
  return shape;
}

class ManifestWriter {
 public:
  void put(const std::string& key, const std::string& value) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos)
      throw CheckpointError("checkpoint: entry '" + key + "' cannot be stored in the manifest");
    text_ += key + '=' + value + '\n';
  }

  // Queues a tensor for the data section and records where it lands.
  void tensor(const std::string& key, const std::string& name, const Tensor& t) {
    put(key, name + ' ' + shape_text(t.shape()) + ' ' + std::to_string(values_.size()));
    values_.insert(values_.end(), t.data().begin(), t.data().end());
  }

  std::vector<std::uint8_t> finish() const {
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + std::strlen(kCheckpointMagic));
    out.push_back('\n');
    put_u64(out, text_.size());
    out.insert(out.end(), text_.begin(), text_.end());
    for (double v : values_) put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
  }

 private:
  std::string text_;
  std::vector<double> values_;
};

class ManifestReader {
 public:
  ManifestReader(std::map<std::string, std::string> entries, std::span<const std::uint8_t> data)
      : entries_(std::move(entries)), data_(data) {}

  bool has(const std::string& key) const { return entries_.contains(key); }

  const std::string& get(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw CheckpointError("checkpoint: manifest lacks '" + key + "'");
    return it->second;
  }
  double number(const std::string& key) const { return parse_double(key, get(key)); }
  std::uint64_t integer(const std::string& key) const { return parse_u64(key, get(key)); }

  std::pair<std::string, Tensor> tensor(const std::string& key) const {
    std::istringstream in(get(key));
    std::string name, shape_s, offset_s;
    if (!(in >> name >> shape_s >> offset_s)) throw CheckpointError("checkpoint: malformed entry " + key);
    const Shape shape = parse_shape(key, shape_s);
    const auto offset = parse_u64(key, offset_s);
    const auto count = numel_of(shape);
    if ((offset + count) * 8 > data_.size())
      throw CheckpointError("checkpoint: tensor " + name + " runs past the end of the file");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(get_u64(data_, (offset + i) * 8));
    try {
      return {name, Tensor(shape, std::move(values))};
    } catch (const ShapeError& e) {
      throw CheckpointError("checkpoint: tensor " + name + ": " + e.what());
    }
  }

  std::map<std::string, std::string> with_prefix(const std::string& prefix) const {
    std::map<std::string, std::string> out;
    for (auto it = entries_.lower_bound(prefix); it != entries_.end() && it->first.starts_with(prefix); ++it)
      out[it->first.substr(prefix.size())] = it->second;
    return out;
  }

 private:
  std::map<std::string, std::string> entries_;
  std::span<const std::uint8_t> data_;
};

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

bool same_bits(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

}  // namespace

OptimizerState OptimizerState::for_parameters(std::span<const Tensor> params, double lr) {
  OptimizerState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros(p.shape()));
    s.v.push_back(Tensor::zeros(p.shape()));
  }
  return s;
}

bool operator==(const OptimizerState& a, const OptimizerState& b) {
  return a.t == b.t && a.lr == b.lr && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.eps == b.eps &&
         same_bits(a.m, b.m) && same_bits(a.v, b.v);
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  return a.version == b.version && a.model == b.model && a.names == b.names &&
         same_bits(a.parameters, b.parameters) && a.optimizer == b.optimizer && a.epoch == b.epoch &&
         a.seed == b.seed && a.rng == b.rng && a.settings == b.settings;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.names.size() != ckpt.parameters.size())
    throw CheckpointError("checkpoint: " + std::to_string(ckpt.names.size()) + " names for " +
                          std::to_string(ckpt.parameters.size()) + " parameters");
  const auto& opt = ckpt.optimizer;
  if (opt.m.size() != ckpt.parameters.size() || opt.v.size() != ckpt.parameters.size())
    throw CheckpointError("checkpoint: optimizer moments do not match the parameters");

  ManifestWriter w;
  w.put("version", std::to_string(ckpt.version));
  w.put("epoch", std::to_string(ckpt.epoch));
  w.put("seed", std::to_string(ckpt.seed));
  const auto& m = ckpt.model;
  w.put("model.image_dim", std::to_string(m.image_dim));
  w.put("model.label_classes", std::to_string(m.label_classes));
  w.put("model.private_dim", std::to_string(m.private_dim));
  w.put("model.shared_kind", to_string(m.shared_kind));
  w.put("model.shared_dim", std::to_string(m.shared_dim));
  w.put("model.hidden_dim", std::to_string(m.hidden_dim));
  w.put("model.temperature", fmt(m.temperature));
  w.put("model.label_mode", to_string(m.label_mode));
  w.put("optimizer.t", std::to_string(opt.t));
  w.put("optimizer.lr", fmt(opt.lr));
  w.put("optimizer.beta1", fmt(opt.beta1));
  w.put("optimizer.beta2", fmt(opt.beta2));
  w.put("optimizer.eps", fmt(opt.eps));
  for (const auto& [k, v] : ckpt.rng) w.put("rng." + k, v);
  for (const auto& [k, v] : ckpt.settings) w.put("setting." + k, v);
  w.put("param_count", std::to_string(ckpt.parameters.size()));
  for (std::size_t i = 0; i < ckpt.parameters.size(); ++i) {
    const auto idx = std::to_string(i);
    w.tensor("param." + idx, ckpt.names[i], ckpt.parameters[i]);
    w.tensor("adam_m." + idx, ckpt.names[i], opt.m[i]);
    w.tensor("adam_v." + idx, ckpt.names[i], opt.v[i]);
  }
  return w.finish();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  const std::size_t magic_len = std::strlen(kCheckpointMagic);
  if (bytes.size() < magic_len + 9 || std::memcmp(bytes.data(), kCheckpointMagic, magic_len) != 0 ||
      bytes[magic_len] != '\n')
    throw CheckpointError("not a checkpoint file (bad magic)");
  const std::size_t len_pos = magic_len + 1;
  const auto manifest_len = get_u64(bytes, len_pos);
  const std::size_t text_pos = len_pos + 8;
  if (manifest_len > bytes.size() - text_pos) throw CheckpointError("checkpoint: truncated manifest");

  std::map<std::string, std::string> entries;
  {
    std::istringstream in(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(text_pos),
                                      bytes.begin() + static_cast<std::ptrdiff_t>(text_pos + manifest_len)));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("checkpoint: malformed manifest line '" + line + "'");
      entries[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  const ManifestReader r(std::move(entries), bytes.subspan(text_pos + manifest_len));

  Checkpoint c;
  const auto version = r.integer("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " does not match supported version " +
                          std::to_string(kCheckpointVersion));
  c.version = static_cast<std::uint32_t>(version);
  c.epoch = r.integer("epoch");
  c.seed = r.integer("seed");
  try {
    c.model.image_dim = r.integer("model.image_dim");
    c.model.label_classes = r.integer("model.label_classes");
    c.model.private_dim = r.integer("model.private_dim");
    c.model.shared_kind = parse_shared_kind(r.get("model.shared_kind"));
    c.model.shared_dim = r.integer("model.shared_dim");
    c.model.hidden_dim = r.integer("model.hidden_dim");
    c.model.temperature = r.number("model.temperature");
    c.model.label_mode = parse_label_mode(r.get("model.label_mode"));
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: bad model configuration: ") + e.what());
  }
  c.optimizer.t = r.integer("optimizer.t");
  c.optimizer.lr = r.number("optimizer.lr");
  c.optimizer.beta1 = r.number("optimizer.beta1");
  c.optimizer.beta2 = r.number("optimizer.beta2");
  c.optimizer.eps = r.number("optimizer.eps");
  c.rng = r.with_prefix("rng.");
  c.settings = r.with_prefix("setting.");
  const auto count = r.integer("param_count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto idx = std::to_string(i);
    auto [name, value] = r.tensor("param." + idx);
    c.names.push_back(name);
    c.parameters.push_back(std::move(value));
    c.optimizer.m.push_back(r.tensor("adam_m." + idx).second);
    c.optimizer.v.push_back(r.tensor("adam_v." + idx).second);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

std::string checkpoint_filename(std::uint64_t epoch) { return "ckpt_epoch" + std::to_string(epoch) + ".dmv"; }

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model = Model::zeros(ckpt.model);
  if (ckpt.names != model.parameter_names())
    throw CheckpointError("checkpoint parameters do not match the model layout");
  try {
    model.set_parameters(ckpt.parameters);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return model;
}

}  // namespace dmvae
