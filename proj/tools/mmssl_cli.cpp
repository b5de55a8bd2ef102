// mmssl: synthetic data generation, pre-training, probing, label-fraction
// sweeps and gradient checks, each leaving a JSON manifest that can replay it.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mmssl/gradcheck.hpp"
#include "mmssl/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kManifestVersion = 1;

// Option names that name files written by a command.
const std::vector<std::string> kOutputKeys{"out", "metrics", "report"};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string manifest;
  std::uint64_t seed = 0;

  // gen-data
  mmssl::GenSpec gen;
  std::string out;

  // shared training inputs
  std::string data;
  std::string checkpoint;
  std::string metrics;
  std::string lexicon;
  mmssl::ArchConfig arch;

  // pretrain
  std::string method = "mm-simclr";
  mmssl::TrainConfig train;

  // probe / sweep
  mmssl::ProbeConfig probe;
  std::vector<double> fractions{0.01, 0.10, 0.20, 0.50};
  mmssl::Index common_dim = 0;
  mmssl::Index head_hidden = 64;
  bool random_init = false;
  std::size_t runs = 1;

  // gradcheck
  double tolerance = 1e-3;
  std::size_t check_seeds = 10;
  double step = 1e-5;
  std::string report;

  // rerun
  std::string from_manifest;
  std::string output_dir;
};

void add_arch(CLI::App* sub, Options& o) {
  sub->add_option("--image-hidden", o.arch.image_hidden, "Image encoder hidden width")->check(CLI::PositiveNumber);
  sub->add_option("--enc-dim", o.arch.enc_dim, "Encoder output width")->check(CLI::PositiveNumber);
  sub->add_option("--token-dim", o.arch.token_dim, "Token embedding width")->check(CLI::PositiveNumber);
  sub->add_option("--proj-hidden", o.arch.proj_hidden, "Projection head hidden width")->check(CLI::PositiveNumber);
  sub->add_option("--embed-dim", o.arch.embed_dim, "Common embedding width")->check(CLI::PositiveNumber);
  sub->add_option("--heads", o.arch.heads, "Co-attention heads")->check(CLI::PositiveNumber);
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "File of `key = value` lines; flags win");
  sub->add_option("--manifest", o.manifest, "Manifest path (default: <output>.manifest.json)");
  sub->add_option("--seed", o.seed, "Root seed");
}

void add_probe_options(CLI::App* sub, Options& o) {
  sub->add_option("--data", o.data, "Dataset file")->required();
  sub->add_option("--checkpoint", o.checkpoint, "Pre-trained checkpoint");
  sub->add_option("--metrics", o.metrics, "Metrics CSV output")->required();
  sub->add_flag("--random-init", o.random_init, "Probe freshly initialized encoders instead of a checkpoint");
  sub->add_option("--epochs", o.probe.epochs, "Head training epochs")->check(CLI::PositiveNumber);
  sub->add_option("--batch-size", o.probe.batch_size, "Head batch size")->check(CLI::PositiveNumber);
  sub->add_option("--lr", o.probe.learning_rate, "Head learning rate")->check(CLI::NonNegativeNumber);
  sub->add_option("--train-share", o.probe.train_share, "Per-class share used for training")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--runs", o.runs, "Independent head runs to average")->check(CLI::PositiveNumber);
  add_arch(sub, o);
}

struct Cli {
  CLI::App app{"Multi-modal self-supervised pre-training on synthetic paired data", "mmssl"};
  Options o;

  Cli() {
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset");
    add_common(gen, o);
    gen->add_option("--n", o.gen.n_samples, "Number of samples")->check(CLI::PositiveNumber);
    gen->add_option("--latent-dim", o.gen.latent_dim, "Latent dimension")->check(CLI::PositiveNumber);
    gen->add_option("--classes", o.gen.classes, "Number of classes")->check(CLI::Range(2, 1 << 20));
    gen->add_option("--height", o.gen.grid.height, "Grid height")->check(CLI::PositiveNumber);
    gen->add_option("--width", o.gen.grid.width, "Grid width")->check(CLI::PositiveNumber);
    gen->add_option("--channels", o.gen.grid.channels, "Grid channels")->check(CLI::PositiveNumber);
    gen->add_option("--vocab", o.gen.vocab, "Vocabulary size")->check(CLI::Range(2, 1 << 20));
    gen->add_option("--seq-len", o.gen.seq_len, "Token sequence length")->check(CLI::PositiveNumber);
    gen->add_option("--eta", o.gen.eta, "Noise share in [0, 1]")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--out", o.out, "Dataset output path")->required();

    auto* pre = app.add_subcommand("pretrain", "Self-supervised pre-training");
    add_common(pre, o);
    pre->add_option("--method", o.method, "simclr, mod-simclr, vse, vse-pp, mm-simclr or ext-pie-net");
    pre->add_option("--data", o.data, "Dataset file")->required();
    pre->add_option("--out", o.out, "Checkpoint output path")->required();
    pre->add_option("--metrics", o.metrics, "Metrics CSV (default: <out>.csv)");
    pre->add_option("--lexicon", o.lexicon, "Synonym lexicon (default: ids 2m <-> 2m+1)");
    pre->add_option("--batch-size", o.train.batch_size, "Batch size")->check(CLI::Range(2, 1 << 30));
    pre->add_option("--epochs", o.train.epochs, "Epochs")->check(CLI::PositiveNumber);
    pre->add_option("--lr", o.train.optimizer.learning_rate, "Adam learning rate")->check(CLI::NonNegativeNumber);
    pre->add_option("--temperature", o.train.loss.temperature, "Contrastive temperature")
        ->check(CLI::PositiveNumber);
    pre->add_option("--margin", o.train.loss.margin, "Hinge margin")->check(CLI::NonNegativeNumber);
    pre->add_option("--lambda", o.train.loss.lambda, "Image-to-text weight of mm_infonce")
        ->check(CLI::Range(0.0, 1.0));
    pre->add_option("--lambda-u2v", o.train.loss.lambda_u2v, "Hinge u->v weight")->check(CLI::NonNegativeNumber);
    pre->add_option("--lambda-v2u", o.train.loss.lambda_v2u, "Hinge v->u weight")->check(CLI::NonNegativeNumber);
    pre->add_option("--lambda-f2f", o.train.loss.lambda_f2f, "Ext-PIE view term")->check(CLI::NonNegativeNumber);
    pre->add_option("--lambda-f2i", o.train.loss.lambda_f2i, "Ext-PIE image term")->check(CLI::NonNegativeNumber);
    pre->add_option("--lambda-f2t", o.train.loss.lambda_f2t, "Ext-PIE text term")->check(CLI::NonNegativeNumber);
    pre->add_option("--noise-sigma", o.train.augment.noise_sigma, "Augmentation noise sd")
        ->check(CLI::NonNegativeNumber);
    pre->add_option("--mask-fraction", o.train.augment.mask_fraction, "Masked patch share")
        ->check(CLI::Range(0.0, 1.0));
    pre->add_option("--rescale-min", o.train.augment.rescale_min, "Lower rescale bound");
    pre->add_option("--rescale-max", o.train.augment.rescale_max, "Upper rescale bound");
    pre->add_option("--synonym-p", o.train.augment.synonym_p, "Synonym replacement probability")
        ->check(CLI::Range(0.0, 1.0));
    add_arch(pre, o);

    auto* probe = app.add_subcommand("probe", "Linear probe on frozen encoders");
    add_common(probe, o);
    add_probe_options(probe, o);

    auto* sweep = app.add_subcommand("sweep", "Label-fraction fine-tuning sweep on frozen encoders");
    add_common(sweep, o);
    add_probe_options(sweep, o);
    sweep->add_option("--fractions", o.fractions, "Label fractions")->delimiter(',')->check(CLI::Range(0.0, 1.0));
    sweep->add_option("--common-dim", o.common_dim, "Per-modality head width (0: embed-dim)")
        ->check(CLI::NonNegativeNumber);
    sweep->add_option("--hidden", o.head_hidden, "Head hidden width")->check(CLI::PositiveNumber);

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    add_common(gc, o);
    gc->add_option("--tolerance", o.tolerance, "Maximum relative error")->check(CLI::PositiveNumber);
    gc->add_option("--seeds", o.check_seeds, "Random cases per operation")->check(CLI::PositiveNumber);
    gc->add_option("--step", o.step, "Central difference step")->check(CLI::PositiveNumber);
    gc->add_option("--report", o.report, "CSV report path");

    auto* rr = app.add_subcommand("rerun", "Replay a command from its manifest");
    rr->add_option("--manifest", o.from_manifest, "Manifest to replay")->required();
    rr->add_option("--output-dir", o.output_dir, "Write outputs here instead of the recorded paths");

    // Repeated flags keep the last value, so config-derived arguments placed
    // first are overridden by explicit ones.
    for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) {
      for (auto* opt : sub->get_options()) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    sweep->get_option("--fractions")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  }

  CLI::App* selected() const { return app.get_subcommands().front(); }
};

bool is_flag(const CLI::Option* opt) { return opt->get_expected_min() == 0; }

/// Command-line arguments reproducing `items` for subcommand `sub`.
std::vector<std::string> items_to_args(CLI::App* sub, const std::vector<CLI::ConfigItem>& items) {
  std::vector<std::string> args;
  for (const auto& item : items) {
    if (item.name == "config" || item.name == "manifest") continue;
    const CLI::Option* opt = sub->get_option_no_throw("--" + item.name);
    if (!opt) throw UsageError("unknown config key '" + item.fullname() + "'");
    if (is_flag(opt)) {
      if (item.inputs.size() == 1 && (item.inputs[0] == "true" || item.inputs[0] == "1")) args.push_back("--" + item.name);
      continue;
    }
    if (item.inputs.empty()) continue;
    if (item.inputs.size() == 1 && item.inputs[0].empty()) continue;
    args.push_back("--" + item.name);
    args.insert(args.end(), item.inputs.begin(), item.inputs.end());
  }
  return args;
}

std::vector<CLI::ConfigItem> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mmssl::IoError("cannot open config " + path);
  return CLI::ConfigTOML().from_config(in);
}

/// Every option of the selected command with its final value, as CLI11
/// config items.
std::vector<CLI::ConfigItem> resolved_items(CLI::App* sub) {
  std::istringstream text(sub->config_to_str(true, false));
  auto items = CLI::ConfigTOML().from_config(text);
  std::erase_if(items, [](const CLI::ConfigItem& it) { return it.name == "config" || it.name == "manifest"; });
  return items;
}

void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw mmssl::IoError("cannot write " + tmp.string());
    out << bytes;
    if (!out) throw mmssl::IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_csv(const fs::path& path, std::span<const mmssl::RunMetrics> runs) {
  std::ostringstream s;
  mmssl::write_metrics_csv(s, runs);
  write_atomic(path, s.str());
}

std::string metrics_path(const Options& o) { return o.metrics.empty() ? o.out + ".csv" : o.metrics; }

mmssl::Model load_encoders(const Options& o, const mmssl::Dataset& data) {
  if (o.random_init) {
    mmssl::Model model(data.dims, o.arch);
    model.init(mmssl::derive_seed(o.seed, "random-init"));
    return model;
  }
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required unless --random-init is given");
  mmssl::Model model = mmssl::load_checkpoint(o.checkpoint);
  if (!(model.data == data.dims)) throw mmssl::FormatError("checkpoint was trained on data of different shape");
  return model;
}

mmssl::ProbeConfig run_config(const Options& o, std::size_t run) {
  mmssl::ProbeConfig cfg = o.probe;
  cfg.seed = o.runs == 1 ? o.seed : mmssl::derive_seed(o.seed, "run", {run});
  return cfg;
}

struct Outcome {
  json inputs = json::object();
  json outputs = json::object();
  std::string manifest_base;
};

Outcome cmd_gen_data(const Options& o) {
  mmssl::GenSpec spec = o.gen;
  spec.seed = o.seed;
  spec.validate();
  mmssl::save(mmssl::generate(spec), o.out);
  std::cout << "wrote " << spec.n_samples << " samples to " << o.out << "\n";
  Outcome r;
  r.outputs["out"] = o.out;
  r.manifest_base = o.out;
  return r;
}

Outcome cmd_pretrain(const Options& o) {
  mmssl::TrainConfig cfg = o.train;
  cfg.method = mmssl::parse_method(o.method);
  cfg.seed = o.seed;
  cfg.arch = o.arch;
  const auto data = mmssl::load(o.data);
  const auto lexicon = o.lexicon.empty() ? mmssl::default_lexicon(data.dims.vocab) : mmssl::SynonymLexicon::load(o.lexicon);
  const auto result = mmssl::pretrain(cfg, data, lexicon);
  mmssl::save_checkpoint(result.model, o.out);
  const std::string csv = metrics_path(o);
  write_csv(csv, std::span(&result.metrics, 1));
  std::cout << mmssl::method_name(cfg.method) << ": final loss " << mmssl::format_double(result.final_loss) << "\n";
  Outcome r;
  r.inputs["data"] = o.data;
  if (!o.lexicon.empty()) r.inputs["lexicon"] = o.lexicon;
  r.outputs["out"] = o.out;
  r.outputs["metrics"] = csv;
  r.manifest_base = o.out;
  return r;
}

Outcome cmd_probe(const Options& o, bool sweep) {
  const auto data = mmssl::load(o.data);
  mmssl::Model model = load_encoders(o, data);
  model.freeze_encoders();

  std::vector<mmssl::RunMetrics> blocks;
  if (!sweep) {
    std::vector<mmssl::RunMetrics> runs;
    for (std::size_t k = 0; k < o.runs; ++k) runs.push_back(mmssl::linear_probe(model, data, run_config(o, k)));
    blocks.push_back(mmssl::average_runs(runs));
  } else {
    std::vector<std::vector<mmssl::RunMetrics>> per_run;
    for (std::size_t k = 0; k < o.runs; ++k) {
      mmssl::SweepConfig cfg;
      cfg.fractions = o.fractions;
      cfg.head = run_config(o, k);
      cfg.common_dim = o.common_dim;
      cfg.hidden = o.head_hidden;
      per_run.push_back(mmssl::finetune_sweep(model, data, cfg));
    }
    for (std::size_t f = 0; f < o.fractions.size(); ++f) {
      std::vector<mmssl::RunMetrics> same;
      for (const auto& run : per_run) same.push_back(run[f]);
      blocks.push_back(mmssl::average_runs(same));
    }
  }
  write_csv(o.metrics, blocks);
  for (const auto& b : blocks) {
    const auto& last = b.final_row("test");
    std::cout << b.method << " fraction " << mmssl::format_double(b.fraction.value_or(1.0)) << ": test accuracy "
              << mmssl::format_double(*last.accuracy) << ", macro-F1 " << mmssl::format_double(*last.macro_f1) << "\n";
  }
  Outcome r;
  r.inputs["data"] = o.data;
  if (!o.random_init) r.inputs["checkpoint"] = o.checkpoint;
  r.outputs["metrics"] = o.metrics;
  r.manifest_base = o.metrics;
  return r;
}

Outcome cmd_gradcheck(const Options& o) {
  const auto cases = mmssl::run_gradcheck_suite(o.check_seeds, o.tolerance, o.step, o.seed);
  std::ostringstream csv;
  csv << "op,seed,max_rel_error,passed\n";
  std::map<std::string, double> worst;
  std::size_t failures = 0;
  for (const auto& c : cases) {
    csv << c.op << ',' << c.seed << ',' << mmssl::format_double(c.max_rel_error) << ',' << (c.passed ? 1 : 0) << '\n';
    worst[c.op] = std::max(worst[c.op], c.max_rel_error);
    if (!c.passed) {
      ++failures;
      std::cout << "FAIL " << c.op << " seed " << c.seed << " max relative error "
                << mmssl::format_double(c.max_rel_error) << "\n";
    }
  }
  for (const auto& name : mmssl::gradcheck_operations()) {
    std::cout << (worst[name] <= o.tolerance ? "ok   " : "fail ") << name << " max relative error "
              << mmssl::format_double(worst[name]) << "\n";
  }
  Outcome r;
  if (!o.report.empty()) {
    write_atomic(o.report, csv.str());
    r.outputs["report"] = o.report;
    r.manifest_base = o.report;
  }
  if (failures > 0) {
    throw CheckFailure(std::to_string(failures) + " of " + std::to_string(cases.size()) +
                       " gradient checks exceed tolerance " + mmssl::format_double(o.tolerance));
  }
  std::cout << "all " << cases.size() << " gradient checks within " << mmssl::format_double(o.tolerance) << "\n";
  return r;
}

int run(const std::vector<std::string>& args);

int cmd_rerun(const Options& o) {
  std::ifstream in(o.from_manifest);
  if (!in) throw mmssl::IoError("cannot open manifest " + o.from_manifest);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw mmssl::FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (m.value("format_version", 0) != kManifestVersion) throw mmssl::FormatError("unsupported manifest version");

  std::vector<CLI::ConfigItem> items;
  for (const auto& [key, value] : m.at("config").items()) {
    CLI::ConfigItem item;
    item.name = key;
    if (value.is_array()) {
      for (const auto& v : value) item.inputs.push_back(v.get<std::string>());
    } else {
      item.inputs.push_back(value.get<std::string>());
    }
    if (!o.output_dir.empty() && !item.inputs.empty() && !item.inputs[0].empty() &&
        std::find(kOutputKeys.begin(), kOutputKeys.end(), key) != kOutputKeys.end()) {
      item.inputs[0] = (fs::path(o.output_dir) / fs::path(item.inputs[0]).filename()).string();
    }
    items.push_back(std::move(item));
  }
  const std::string command = m.at("command").get<std::string>();
  Cli probe_cli;
  CLI::App* sub = probe_cli.app.get_subcommand(command);
  std::vector<std::string> args{"mmssl", command};
  const auto rest = items_to_args(sub, items);
  args.insert(args.end(), rest.begin(), rest.end());
  return run(args);
}

/// Parses `args` (program name first), folding a --config file in ahead of
/// the explicit flags.
std::unique_ptr<Cli> parse(const std::vector<std::string>& args) {
  auto cli = std::make_unique<Cli>();
  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  cli->app.parse(rev);
  CLI::App* sub = cli->selected();
  if (cli->o.config.empty()) return cli;

  const auto extra = items_to_args(sub, read_config(cli->o.config));
  std::vector<std::string> merged{args[0], sub->get_name()};
  merged.insert(merged.end(), extra.begin(), extra.end());
  merged.insert(merged.end(), args.begin() + 2, args.end());
  auto again = std::make_unique<Cli>();
  std::vector<std::string> rev2(merged.rbegin(), merged.rend() - 1);
  again->app.parse(rev2);
  return again;
}

void write_manifest(const Cli& cli, const Outcome& outcome, double seconds, const std::vector<std::string>& args) {
  const Options& o = cli.o;
  if (outcome.manifest_base.empty() && o.manifest.empty()) return;
  CLI::App* sub = cli.selected();
  json m;
  m["format_version"] = kManifestVersion;
  m["command"] = sub->get_name();
  m["argv"] = args;
  json config = json::object();
  for (const auto& item : resolved_items(sub)) {
    if (item.inputs.size() == 1) {
      config[item.name] = item.inputs[0];
    } else {
      config[item.name] = item.inputs;
    }
  }
  m["config"] = config;
  m["seed"] = o.seed;
  m["inputs"] = outcome.inputs;
  m["outputs"] = outcome.outputs;
  m["duration_seconds"] = seconds;
  const fs::path path = o.manifest.empty() ? fs::path(outcome.manifest_base + ".manifest.json") : fs::path(o.manifest);
  write_atomic(path, m.dump(2) + "\n");
}

int run(const std::vector<std::string>& args) {
  std::unique_ptr<Cli> cli;
  try {
    cli = parse(args);
  } catch (const CLI::ParseError& e) {
    Cli fallback;
    const int code = fallback.app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mmssl::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }

  const std::string name = cli->selected()->get_name();
  const auto start = std::chrono::steady_clock::now();
  try {
    if (name == "rerun") return cmd_rerun(cli->o);
    Outcome outcome;
    if (name == "gen-data") outcome = cmd_gen_data(cli->o);
    else if (name == "pretrain") outcome = cmd_pretrain(cli->o);
    else if (name == "probe") outcome = cmd_probe(cli->o, false);
    else if (name == "sweep") outcome = cmd_probe(cli->o, true);
    else if (name == "gradcheck") outcome = cmd_gradcheck(cli->o);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(*cli, outcome, seconds, args);
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mmssl::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mmssl::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CheckFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const mmssl::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const mmssl::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const mmssl::ParseError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }
