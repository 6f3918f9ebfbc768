// dmvae: train, evaluate and inspect disentangled multimodal VAEs.
//
// Exit codes: 0 success, 1 configuration or checkpoint error, 2 data error,
// 3 numerical abort.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "dmvae/checkpoint.hpp"
#include "dmvae/checks.hpp"
#include "dmvae/config.hpp"
#include "dmvae/data.hpp"
#include "dmvae/eval.hpp"
#include "dmvae/trainer.hpp"

namespace {

using namespace dmvae;

enum Exit { kOk = 0, kConfig = 1, kData = 2, kNumerical = 3 };

// Flags shared by the subcommands; unset optionals leave the config alone.
struct Overrides {
  std::string config_file;
  std::string data_dir;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> paired_fraction;
  std::string shared_kind;
  std::optional<double> beta_tc;
  std::optional<double> lambda_label;
  std::optional<double> temperature;
  std::optional<std::size_t> epochs;
  bool full = false;
};

std::string env_data_dir() {
  const char* v = std::getenv("DMVAE_DATA_DIR");
  return v ? v : "";
}

// File first, then the environment for a missing data dir, then flags.
RunConfig resolve(const Overrides& o, RunConfig base = {}) {
  RunConfig c = o.config_file.empty() ? base : load_config(o.config_file, base);
  if (c.data_dir.empty()) c.data_dir = env_data_dir();
  if (o.full) {
    c.epochs = kFullEpochs;
    c.train_limit = 50000;
  }
  if (!o.data_dir.empty()) c.data_dir = o.data_dir;
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  if (o.seed) c.seed = *o.seed;
  if (o.paired_fraction) c.paired_fraction = *o.paired_fraction;
  if (!o.shared_kind.empty()) c.set("shared_kind", o.shared_kind);
  if (o.beta_tc) c.beta_tc_private = *o.beta_tc;
  if (o.lambda_label) c.lambda_label = *o.lambda_label;
  if (o.temperature) c.temperature = *o.temperature;
  if (o.epochs) c.epochs = *o.epochs;
  c.validate();
  return c;
}

// The run configuration a checkpoint was trained with; the data directory
// may be redirected.
RunConfig config_of(const Checkpoint& ckpt, const std::string& data_dir) {
  RunConfig c;
  try {
    for (const auto& [k, v] : ckpt.settings) c.set(k, v);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint settings: ") + e.what());
  }
  if (!data_dir.empty())
    c.data_dir = data_dir;
  else if (!env_data_dir().empty() && !std::filesystem::is_directory(c.data_dir))
    c.data_dir = env_data_dir();
  return c;
}

std::filesystem::path output_dir(const Overrides& o) { return o.out_dir.empty() ? "." : o.out_dir; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw ConfigError("cannot write " + path.string());
}

int cmd_train(const Overrides& o, const std::string& resume_path) {
  const RunConfig c = resolve(o);
  const auto split = load_run_data(c);
  std::filesystem::create_directories(c.out_dir);
  write_text(c.out_dir / "resolved_config.txt", c.dump());

  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);
  std::printf("training %s: %zu images (%zu paired), %zu epochs -> %s\n", c.dataset.c_str(), split.train.count,
              split.paired_count(), c.epochs, c.out_dir.string().c_str());
  const auto result = train(c.train_config(), c.model_config(split.train.image_dim, split.train.label_dim),
                            c.loss_weights(split.train.count), split, resume ? &*resume : nullptr);
  for (const auto& m : result.metrics) {
    std::printf("epoch %3llu  loss %.4f", static_cast<unsigned long long>(m.epoch), m.loss.total);
    if (m.test_accuracy) std::printf("  test_acc %.4f  test_f1 %.4f", *m.test_accuracy, m.test_f1.value_or(0.0));
    std::printf("  %.1fs\n", m.wall_seconds);
  }
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const Overrides& o) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Model model = model_from_checkpoint(ckpt);
  const RunConfig c = config_of(ckpt, o.data_dir);
  const auto split = load_run_data(c);
  const eval::EvalReport report = eval::evaluate(model, split.test);
  std::printf("accuracy %.4f\n", report.accuracy);
  if (report.mode == LabelMode::multilabel) std::printf("f1_macro %.4f\n", report.f1_macro);
  const std::filesystem::path out = output_dir(o);
  std::filesystem::create_directories(out);
  eval::write_report(out / "eval_report.txt", report,
                     {{"checkpoint", ckpt_path}, {"epoch", std::to_string(ckpt.epoch)}});
  return kOk;
}

int cmd_traverse(const std::string& ckpt_path, const Overrides& o, std::size_t rows) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Model model = model_from_checkpoint(ckpt);
  if (model.config().shared_kind != SharedKind::discrete)
    throw ConfigError("traverse needs a discrete shared space");
  const RunConfig c = config_of(ckpt, o.data_dir);
  const auto split = load_run_data(c);
  rows = std::min(rows, split.test.count);
  const auto& ds = split.test;
  std::vector<double> src(ds.images.begin(), ds.images.begin() + static_cast<std::ptrdiff_t>(rows * ds.image_dim));
  const std::filesystem::path out = output_dir(o);
  std::filesystem::create_directories(out);
  eval::traversal_grid(model, Tensor({rows, ds.image_dim}, std::move(src)), out / "traversal.pgm");
  std::printf("wrote %s\n", (out / "traversal.pgm").string().c_str());
  return kOk;
}

int cmd_embed(const std::string& ckpt_path, const Overrides& o) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Model model = model_from_checkpoint(ckpt);
  const RunConfig c = config_of(ckpt, o.data_dir);
  const auto split = load_run_data(c);
  const std::filesystem::path out = output_dir(o);
  std::filesystem::create_directories(out);
  eval::export_embeddings(model, split.test, out / "embeddings.csv");
  std::printf("wrote %s (%zu rows)\n", (out / "embeddings.csv").string().c_str(), split.test.count);
  return kOk;
}

int cmd_selftest(const Overrides& o) {
  std::vector<checks::CheckResult> results{checks::distribution_suite(), checks::gradient_suite(),
                                           checks::estimator_suite(), checks::structure_suite()};
  if (!o.out_dir.empty()) results.push_back(checks::determinism_suite(std::filesystem::path(o.out_dir) / "selftest"));
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s %-13s %6.1fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? kOk : kNumerical;
}

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--data-dir", o.data_dir, "MNIST IDX directory (default: $DMVAE_DATA_DIR)");
  cmd->add_option("--out-dir", o.out_dir, "run directory");
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--paired-fraction", o.paired_fraction);
  cmd->add_option("--shared-kind", o.shared_kind)->check(CLI::IsMember({"discrete", "continuous"}));
  cmd->add_option("--beta-tc", o.beta_tc, "TC weight of the private image latent");
  cmd->add_option("--lambda-label", o.lambda_label);
  cmd->add_option("--temperature", o.temperature);
  cmd->add_option("--epochs", o.epochs);
  cmd->add_flag("--full", o.full, "long-run preset: 500 epochs, 50000 training images");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled multimodal VAE"};
  app.require_subcommand(1);
  Overrides o;
  std::string ckpt, resume;
  std::size_t rows = 10;

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_run_flags(train_cmd, o);
  train_cmd->add_option("--resume", resume, "continue from this checkpoint");

  auto* eval_cmd = app.add_subcommand("eval", "cross-modal classification of the test set");
  auto* traverse_cmd = app.add_subcommand("traverse", "shared-space traversal grid (PGM)");
  auto* embed_cmd = app.add_subcommand("embed", "export test-set latents as CSV");
  for (auto* cmd : {eval_cmd, traverse_cmd, embed_cmd}) {
    cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    cmd->add_option("--data-dir", o.data_dir, "MNIST IDX directory (default: the checkpoint's)");
    cmd->add_option("--out-dir", o.out_dir, "output directory");
  }
  traverse_cmd->add_option("--rows", rows, "number of style source images");

  auto* selftest_cmd = app.add_subcommand("selftest", "property suites that need no dataset");
  selftest_cmd->add_option("--out-dir", o.out_dir, "also run the determinism suite under this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(o, resume);
    if (*eval_cmd) return cmd_eval(ckpt, o);
    if (*traverse_cmd) return cmd_traverse(ckpt, o, rows);
    if (*embed_cmd) return cmd_embed(ckpt, o);
    if (*selftest_cmd) return cmd_selftest(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kConfig;
  } catch (const data::IdxError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  }
  return kOk;
}
