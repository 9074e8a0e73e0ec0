#include "aldsr/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "aldsr/dataset.hpp"
#include "aldsr/errors.hpp"
#include "aldsr/gradcheck_suite.hpp"
#include "aldsr/image.hpp"
#include "aldsr/metrics.hpp"
#include "aldsr/model_io.hpp"
#include "aldsr/models.hpp"
#include "aldsr/trainer.hpp"

namespace aldsr::cli {
namespace {

// Reference ALD-RDB count the attention accounting is reconciled against.
constexpr std::size_t kReferenceAldRdbCount = 257280;
constexpr const char* kBicubicSentinel = "bicubic";

KeyValueConfig parse_overrides(const std::vector<std::string>& pairs) {
  KeyValueConfig config;
  for (const auto& pair : pairs) {
    const auto eq = pair.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects KEY=VALUE, got '" + pair + "'");
    }
    config.set(pair.substr(0, eq), pair.substr(eq + 1));
  }
  return config;
}

std::set<std::string> all_config_keys() {
  std::set<std::string> keys = model_config_keys();
  keys.insert(train_config_keys().begin(), train_config_keys().end());
  return keys;
}

KeyValueConfig model_part(const KeyValueConfig& config) {
  KeyValueConfig out;
  for (const auto& [key, value] : config.entries()) {
    if (model_config_keys().count(key) != 0) out.set(key, value);
  }
  return out;
}

ALDSRSpec require_aldsr(const ModelSpec& spec) {
  const auto* arch = std::get_if<ALDSRSpec>(&spec.arch);
  if (arch == nullptr) throw ConfigError("this command needs variant = aldsr");
  return *arch;
}

// The model config next to a weight file, unless one is given explicitly.
KeyValueConfig weights_config(const std::string& weights, const std::string& config_path) {
  std::filesystem::path path = config_path;
  if (path.empty()) path = std::filesystem::path(weights).parent_path() / "config.txt";
  if (!std::filesystem::exists(path)) {
    throw ConfigError("no model config for " + weights + " (looked for " + path.string() +
                      "; pass --config)");
  }
  return KeyValueConfig::load(path);
}

struct LoadedModel {
  std::optional<ALDSR<float>> model;
  std::size_t scale = 4;
};

LoadedModel load_model(const std::string& weights, const std::string& config_path,
                       std::size_t bicubic_scale) {
  LoadedModel loaded;
  if (weights == kBicubicSentinel) {
    loaded.scale = bicubic_scale;
    return loaded;
  }
  const KeyValueConfig config = model_part(weights_config(weights, config_path));
  const ALDSRSpec arch = require_aldsr(model_spec_from_config(config));
  loaded.model.emplace(arch);
  load_weights(weights, loaded.model->parameters());
  loaded.scale = arch.scale;
  return loaded;
}

Upscaler upscaler_for(const LoadedModel& loaded) {
  if (!loaded.model) {
    const std::size_t s = loaded.scale;
    return [s](const Image& lr) { return bicubic_upscale(lr, s); };
  }
  const ALDSR<float>* model = &*loaded.model;
  return [model](const Image& lr) { return super_resolve(*model, lr); };
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Rows of an existing loss log up to and including `iteration`.
std::string loss_log_prefix(const std::filesystem::path& path, std::size_t iteration) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read loss log " + path.string() + " to resume");
  std::string out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      if (line != kLossCsvHeader) throw DataError(path.string() + " is not a loss log");
      out += line + "\n";
      continue;
    }
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) > iteration) break;
    out += line + "\n";
  }
  return out;
}

struct TrainArgs {
  std::string config;
  std::string data_hr;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_iterations;
  std::string resume;
  std::vector<std::string> set;
  std::string eval_lr;
  std::string eval_hr;
};

int cmd_train(const TrainArgs& args, std::ostream& out) {
  KeyValueConfig config;
  if (!args.config.empty()) config = KeyValueConfig::load(args.config);
  config.merge(parse_overrides(args.set));
  if (args.seed) config.set("seed", std::to_string(*args.seed));
  if (args.max_iterations) config.set("max_iterations", std::to_string(*args.max_iterations));
  config.require_known(all_config_keys());

  const KeyValueConfig model_config = model_part(config);
  const ModelSpec spec = model_spec_from_config(model_config);
  const ALDSRSpec arch = require_aldsr(spec);
  const TrainConfig train_config = train_config_from(config);

  const std::filesystem::path data(args.data_hr);
  if (!std::filesystem::exists(data)) throw DataError("training data not found: " + data.string());
  const PairSet set = std::filesystem::is_directory(data) ? PairSet::from_hr_dir(data, arch.scale)
                                                          : PairSet::from_index(data, arch.scale);
  if (set.empty()) throw DataError("no training images in " + data.string());

  std::optional<std::vector<EvalPair>> eval_pairs;
  if (!args.eval_lr.empty() || !args.eval_hr.empty()) {
    eval_pairs = load_eval_pairs(args.eval_lr, args.eval_hr, arch.scale);
  }

  const std::filesystem::path out_dir(args.out_dir);
  std::filesystem::create_directories(out_dir);
  KeyValueConfig effective = model_spec_to_config(spec);
  effective.merge(train_config_to(train_config));
  effective.save(out_dir / "config.txt");

  ALDSR<float> model(arch);
  init_weights(model.parameters(), spec.init, spec.seed);
  Trainer<float> trainer(model, set, train_config, model_spec_to_config(spec));

  const auto loss_path = out_dir / "loss.csv";
  const auto eval_path = out_dir / "eval.csv";
  if (!args.resume.empty()) {
    trainer.load_checkpoint(args.resume);
    write_text(loss_path, loss_log_prefix(loss_path, trainer.iteration()));
    out << "resumed from " << args.resume << " at iteration " << trainer.iteration() << "\n";
  } else {
    write_text(loss_path, std::string(kLossCsvHeader) + "\n");
    if (eval_pairs) write_text(eval_path, "iter,psnr_db,ssim\n");
  }

  std::ofstream loss_log(loss_path, std::ios::app);
  std::ofstream eval_log;
  if (eval_pairs) eval_log.open(eval_path, std::ios::app);
  const std::size_t total = train_config.total_iterations();
  out << "training " << describe_arch(spec) << ", " << with_commas(count_values(model.parameters()))
      << " parameters, " << set.size() << " images, " << total << " iterations\n";

  const auto checkpoint = out_dir / "checkpoint";
  trainer.run(total, [&](const LossRow& row) {
    loss_log << loss_csv_line(row) << "\n" << std::flush;
    if (train_config.checkpoint_every > 0 && row.iter % train_config.checkpoint_every == 0) {
      trainer.save_checkpoint(checkpoint);
    }
    if (eval_pairs && train_config.eval_every > 0 && row.iter % train_config.eval_every == 0) {
      const MetricReport report = evaluate(model, *eval_pairs, arch.scale);
      eval_log << row.iter << "," << std::setprecision(6) << std::fixed << report.mean_psnr()
               << "," << report.mean_ssim() << "\n"
               << std::flush;
      eval_log.unsetf(std::ios::fixed);
    }
  });
  trainer.save_checkpoint(checkpoint);
  save_weights(out_dir / "model.aldw", model.parameters());
  out << "wrote " << (out_dir / "model.aldw").string() << " and " << loss_path.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& weights, const std::string& config_path,
             const std::string& lr_dir, const std::string& hr_dir, std::optional<std::size_t> shave,
             std::size_t scale, const std::string& csv_path, std::ostream& out, std::ostream& err) {
  const LoadedModel loaded = load_model(weights, config_path, scale);
  const auto pairs = load_eval_pairs(lr_dir, hr_dir, loaded.scale);
  const MetricReport report =
      evaluate(upscaler_for(loaded), pairs, loaded.scale, shave.value_or(loaded.scale));
  if (csv_path.empty()) {
    out << report.to_csv();
  } else {
    write_text(csv_path, report.to_csv());
  }
  err << report.summary_table();
  return kOk;
}

int cmd_sr(const std::string& weights, const std::string& config_path, const std::string& input,
           const std::string& output, std::size_t scale, std::ostream& out) {
  const LoadedModel loaded = load_model(weights, config_path, scale);
  const Image lr = load_png(input);
  const Image sr = upscaler_for(loaded)(lr);
  save_png(output, sr);
  out << input << " (" << lr.width << "x" << lr.height << ") -> " << output << " (" << sr.width
      << "x" << sr.height << ")\n";
  return kOk;
}

int cmd_degrade(const std::string& hr_dir, const std::string& out_dir, std::size_t scale,
                std::ostream& out, std::ostream& err) {
  const PrepareReport report = prepare_degraded_set(hr_dir, out_dir, scale);
  for (const auto& [path, message] : report.failures) err << "skipped " << path.string() << ": " << message << "\n";
  out << "degraded " << report.index.entries.size() << " images at x" << scale << " into "
      << out_dir << " (" << report.failures.size() << " failed)\n";
  return report.failures.empty() ? kOk : kDataError;
}

int cmd_gradcheck(const std::string& suite, double tolerance, std::uint64_t seed,
                  std::ostream& out) {
  std::size_t failures = 0;
  for (const auto& c : gradcheck_suite(suite, seed, tolerance)) {
    const auto start = std::chrono::steady_clock::now();
    const GradCheckResult result = c.run();
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = result.checked > 0 && result.max_rel_error < tolerance;
    failures += pass ? 0 : 1;
    char line[320];
    std::snprintf(line, sizeof(line),
                  "%s  %-24s max_rel_err=%.3e  checked=%zu  skipped=%zu  kinks=%zu  unresolved=%zu  (%.2fs)"
                  "  worst: input %zu[%zu] analytic=%.6e numeric=%.6e\n",
                  pass ? "PASS" : "FAIL", c.name.c_str(), result.max_rel_error, result.checked,
                  result.skipped, result.kinks, result.unresolved, seconds, result.worst_input, result.worst_index,
                  result.worst_analytic, result.worst_numeric);
    out << line;
  }
  out << (failures == 0 ? "all gradient checks passed" : std::to_string(failures) + " failed")
      << " (tolerance " << tolerance << ")\n";
  return failures == 0 ? kOk : kNumericFailure;
}

void print_breakdown(std::ostream& os, const ParameterCount& count) {
  for (const auto& [component, n] : count.components) {
    os << "    " << std::left << std::setw(28) << component << std::right << std::setw(12)
       << with_commas(n) << "\n";
  }
  os << "    " << std::left << std::setw(28) << "attention (included above)" << std::right
     << std::setw(12) << with_commas(count.attention) << "\n";
}

ModelSpec spec_for(const std::string& arch, const KeyValueConfig& overrides) {
  KeyValueConfig config = overrides;
  config.set("variant", arch);
  return model_spec_from_config(config);
}

}  // namespace

std::string with_commas(std::size_t n) {
  std::string digits = std::to_string(n);
  for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(digits.size()) - 3; i > 0; i -= 3) {
    digits.insert(static_cast<std::size_t>(i), ",");
  }
  return digits;
}

std::string params_report(const std::string& arch, const KeyValueConfig& overrides) {
  overrides.require_known(model_config_keys());
  std::ostringstream os;
  const auto row = [&](const ModelSpec& spec, bool breakdown) {
    const ParameterCount count = count_parameters(spec);
    os << "  " << std::left << std::setw(66) << describe_arch(spec) << std::right << std::setw(12)
       << with_commas(count.total) << "\n";
    if (breakdown) print_breakdown(os, count);
  };

  if (arch != "all") {
    os << "architecture                                                             parameters\n";
    row(spec_for(arch, overrides), true);
    return os.str();
  }

  os << "RDB family (bias-free, 1x1 local fusion)\n";
  for (const char* variant : {"rdb", "dw-rdb", "ldw-rdb", "ald-rdb"}) {
    row(spec_for(variant, overrides), false);
  }

  const ModelSpec ald = spec_for("ald-rdb", overrides);
  const auto& base = std::get<RDBFamilySpec>(ald.arch);
  ModelSpec ldw = ald;
  std::get<RDBFamilySpec>(ldw.arch).variant = RDBVariant::LDW_RDB;
  const std::size_t ldw_total = count_parameters(ldw).total;
  os << "\nALD-RDB attention accounting (reference total " << with_commas(kReferenceAldRdbCount)
     << ")\n";
  os << "       r  attention bias      total   attention  matches\n";
  std::vector<std::string> matches;
  for (const auto& c : enumerate_attention_conventions(base, {8, 16, 32})) {
    const bool match = c.total == kReferenceAldRdbCount;
    if (match) {
      matches.push_back("r=" + std::to_string(c.reduction) + ", attention bias " +
                        (c.attention_bias ? "on" : "off"));
    }
    char line[128];
    std::snprintf(line, sizeof(line), "  %6zu  %14s  %9s  %10s  %s\n", c.reduction,
                  c.attention_bias ? "on" : "off", with_commas(c.total).c_str(),
                  with_commas(c.total - ldw_total).c_str(), match ? "yes" : "");
    os << line;
  }
  os << "  reproduced by: " << (matches.empty() ? std::string("none") : matches.front());
  for (std::size_t i = 1; i < matches.size(); ++i) os << "; " << matches[i];
  os << "\n";

  os << "\nALDB (ALD conv pairs with local residuals, 1x1 state conv, 1x1 fusion 2C->C)\n";
  row(spec_for("aldb", overrides), true);
  os << "\nALDSR\n";
  row(spec_for("aldsr", overrides), true);
  return os.str();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single-image super-resolution with attention-aware linear depthwise networks"};
  app.name("aldsr");
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train an ALDSR model with L1 loss and Adam");
  train_cmd->add_option("--config", train.config, "Key-value config file (model + training keys)");
  train_cmd->add_option("--data-hr", train.data_hr,
                        "Directory of HR PNGs (LR degraded on the fly) or an index.txt")
      ->required();
  train_cmd->add_option("--out-dir", train.out_dir, "Output directory for checkpoints and logs")
      ->required();
  train_cmd->add_option("--seed", train.seed, "Seed for weight init and patch sampling [config: 1]");
  train_cmd->add_option("--max-iterations", train.max_iterations,
                        "Stop after this many steps [config: epochs * iterations_per_epoch]");
  train_cmd->add_option("--resume", train.resume,
                        "Checkpoint prefix to resume from (e.g. OUT/checkpoint)");
  train_cmd->add_option("--set", train.set, "Override a config key, KEY=VALUE (repeatable)");
  train_cmd->add_option("--eval-lr", train.eval_lr, "LR directory for periodic evaluation");
  train_cmd->add_option("--eval-hr", train.eval_hr, "HR directory for periodic evaluation");

  std::string weights;
  std::string model_config;
  std::size_t scale = 4;
  std::string lr_dir, hr_dir, csv_path;
  std::optional<std::size_t> shave;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM on the Y channel of a paired test set");
  eval_cmd->add_option("--weights", weights, "ALDW weight file, or 'bicubic'")->required();
  eval_cmd->add_option("--config", model_config,
                       "Model config [default: config.txt next to the weights]");
  eval_cmd->add_option("--lr-dir", lr_dir, "Directory of LR PNGs")->required();
  eval_cmd->add_option("--hr-dir", hr_dir, "Directory of HR PNGs with matching names")->required();
  eval_cmd->add_option("--shave", shave, "Border pixels excluded from the metrics [default: scale]");
  eval_cmd->add_option("--scale", scale, "Upscaling factor for --weights bicubic")
      ->capture_default_str();
  eval_cmd->add_option("--csv", csv_path, "Write the CSV report here instead of stdout");

  std::string input, output;
  auto* sr_cmd = app.add_subcommand("sr", "Super-resolve one PNG");
  sr_cmd->add_option("--weights", weights, "ALDW weight file, or 'bicubic'")->required();
  sr_cmd->add_option("--config", model_config,
                     "Model config [default: config.txt next to the weights]");
  sr_cmd->add_option("--input", input, "LR PNG")->required();
  sr_cmd->add_option("--output", output, "Output PNG")->required();
  sr_cmd->add_option("--scale", scale, "Upscaling factor for --weights bicubic")
      ->capture_default_str();

  std::string out_dir;
  auto* degrade_cmd = app.add_subcommand("degrade", "Materialize a bicubic-downscaled LR set");
  degrade_cmd->add_option("--hr-dir", hr_dir, "Directory of HR PNGs")->required();
  degrade_cmd->add_option("--out-dir", out_dir, "Output directory (hr/, lr_x<s>/, index.txt)")
      ->required();
  degrade_cmd->add_option("--scale", scale, "Downscaling factor")->capture_default_str();

  std::string arch = "all";
  std::string params_config;
  std::vector<std::string> params_set;
  auto* params_cmd = app.add_subcommand("params", "Print parameter counts");
  params_cmd
      ->add_option("--arch", arch, "all, aldsr, aldb, rdb, dw-rdb, ldw-rdb or ald-rdb")
      ->capture_default_str();
  params_cmd->add_option("--config", params_config, "Model config providing defaults");
  params_cmd->add_option("--set", params_set, "Override a model config key, KEY=VALUE (repeatable)");

  std::string suite = "all";
  double tolerance = 1e-4;
  std::uint64_t gc_seed = 7;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks (f64)");
  gradcheck_cmd->add_option("--suite", suite, "all, ops, layers or models")->capture_default_str();
  gradcheck_cmd->add_option("--tolerance", tolerance, "Maximum relative error")
      ->capture_default_str();
  gradcheck_cmd->add_option("--seed", gc_seed, "Seed for the random inputs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train, out);
    if (*eval_cmd) return cmd_eval(weights, model_config, lr_dir, hr_dir, shave, scale, csv_path, out, err);
    if (*sr_cmd) return cmd_sr(weights, model_config, input, output, scale, out);
    if (*degrade_cmd) return cmd_degrade(hr_dir, out_dir, scale, out, err);
    if (*params_cmd) {
      KeyValueConfig overrides;
      if (!params_config.empty()) overrides = model_part(KeyValueConfig::load(params_config));
      overrides.merge(parse_overrides(params_set));
      if (overrides.has("variant")) {
        if (arch == "all") arch = overrides.get("variant", arch);
        KeyValueConfig rest;
        for (const auto& [key, value] : overrides.entries()) {
          if (key != "variant") rest.set(key, value);
        }
        overrides = rest;
      }
      out << params_report(arch, overrides);
      return kOk;
    }
    if (*gradcheck_cmd) return cmd_gradcheck(suite, tolerance, gc_seed, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const RangeError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace aldsr::cli
