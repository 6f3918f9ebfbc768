#include "dmvae/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dmvae {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ConfigError("config key '" + key + "': value must be finite");
  }
  return v;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_number<T>(k, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return fmt(c.*member);
            else
              return std::to_string(c.*member);
          }};
}

Field optional_field(std::optional<std::size_t> RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "auto")
              c.*member = std::nullopt;
            else
              c.*member = parse_number<std::size_t>(k, v);
          },
          [member](const RunConfig& c) { return c.*member ? std::to_string(*(c.*member)) : std::string("auto"); }};
}

Field path_field(std::filesystem::path RunConfig::*member) {
  return {[member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return (c.*member).string(); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      {"dataset",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          if (v != "mnist" && v != "synth") throw ConfigError("dataset must be 'mnist' or 'synth', got '" + v + "'");
          c.dataset = v;
        },
        [](const RunConfig& c) { return c.dataset; }}},
      {"data_dir", path_field(&RunConfig::data_dir)},
      {"train_limit", number_field(&RunConfig::train_limit)},
      {"test_limit", number_field(&RunConfig::test_limit)},
      {"synth_train", number_field(&RunConfig::synth_train)},
      {"synth_test", number_field(&RunConfig::synth_test)},
      {"synth_classes", number_field(&RunConfig::synth_classes)},
      {"paired_fraction", number_field(&RunConfig::paired_fraction)},
      {"private_dim", number_field(&RunConfig::private_dim)},
      {"shared_kind",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.shared_kind = parse_shared_kind(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + k + "': " + e.what());
          }
        },
        [](const RunConfig& c) { return std::string(to_string(c.shared_kind)); }}},
      {"shared_dim", optional_field(&RunConfig::shared_dim)},
      {"hidden_dim", number_field(&RunConfig::hidden_dim)},
      {"temperature", number_field(&RunConfig::temperature)},
      {"lambda_image", number_field(&RunConfig::lambda_image)},
      {"lambda_label", number_field(&RunConfig::lambda_label)},
      {"kl_weight", number_field(&RunConfig::kl_weight)},
      {"beta_tc_private", number_field(&RunConfig::beta_tc_private)},
      {"beta_tc_shared", number_field(&RunConfig::beta_tc_shared)},
      {"epochs", number_field(&RunConfig::epochs)},
      {"batch_size", number_field(&RunConfig::batch_size)},
      {"paired_batch", optional_field(&RunConfig::paired_batch)},
      {"learning_rate", number_field(&RunConfig::learning_rate)},
      {"seed", number_field(&RunConfig::seed)},
      {"eval_every", number_field(&RunConfig::eval_every)},
      {"checkpoint_every", number_field(&RunConfig::checkpoint_every)},
      {"out_dir", path_field(&RunConfig::out_dir)},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

void RunConfig::validate() const {
  if (!(paired_fraction >= 0.0 && paired_fraction <= 1.0))
    throw ConfigError("paired_fraction must lie in [0, 1], got " + fmt(paired_fraction));
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  for (const auto& [name, v] : {std::pair{"lambda_image", lambda_image}, {"lambda_label", lambda_label},
                                {"kl_weight", kl_weight}, {"beta_tc_private", beta_tc_private},
                                {"beta_tc_shared", beta_tc_shared}})
    if (v < 0.0) throw ConfigError(std::string(name) + " must be non-negative");
  if (dataset == "synth" && (synth_classes == 0 || synth_classes > 16))
    throw ConfigError("synth_classes must lie in 1..16");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  try {
    const std::size_t labels = dataset == "synth" ? synth_classes : 10;
    model_config(dataset == "synth" ? data::kSynthImageDim : 784, labels).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + '=' + f.get(*this) + '\n';
  return out;
}

ModelConfig RunConfig::model_config(std::size_t image_dim, std::size_t label_classes) const {
  ModelConfig m;
  m.image_dim = image_dim;
  m.label_classes = label_classes;
  m.private_dim = private_dim;
  m.shared_kind = shared_kind;
  m.shared_dim = shared_dim.value_or(shared_kind == SharedKind::discrete ? label_classes : 10);
  m.hidden_dim = hidden_dim;
  m.temperature = temperature;
  m.label_mode = LabelMode::single;
  return m;
}

objective::LossWeights RunConfig::loss_weights(std::size_t dataset_size) const {
  objective::LossWeights w;
  w.lambda_image = lambda_image;
  w.lambda_label = lambda_label;
  w.kl_weight = kl_weight;
  w.beta_tc_private = beta_tc_private;
  w.beta_tc_shared = beta_tc_shared;
  w.dataset_size = dataset_size;
  return w;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.paired_batch = paired_batch;
  t.learning_rate = learning_rate;
  t.seed = seed;
  t.eval_every = eval_every;
  t.checkpoint_every = checkpoint_every;
  t.out_dir = out_dir;
  for (const auto& [k, f] : fields()) t.settings[k] = f.get(*this);
  return t;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

data::DatasetSplit load_run_data(const RunConfig& config) {
  if (config.dataset == "synth")
    return data::make_synth_split(config.synth_train, config.synth_test, config.synth_classes,
                                  config.paired_fraction, config.seed);
  if (config.data_dir.empty()) throw data::IdxError(data::IdxErrorKind::io, 0, "no data directory given");
  if (!std::filesystem::is_directory(config.data_dir))
    throw data::IdxError(data::IdxErrorKind::io, 0, "data directory not found: " + config.data_dir.string());
  data::DatasetSplit split;
  split.train = data::load_mnist(config.data_dir, "train", config.train_limit);
  split.test = data::load_mnist(config.data_dir, "t10k", config.test_limit);
  split.paired = data::make_pairing_mask(split.train.count, config.paired_fraction, config.seed);
  return split;
}

}  // namespace dmvae
