// Acceptance gate: one PASS/FAIL line per criterion. Exit status is non-zero
// if any selected criterion fails.

#include <sys/wait.h>

#include <CLI11.hpp>
#include <Eigen/QR>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "mmssl/gradcheck.hpp"
#include "mmssl/losses.hpp"
#include "mmssl/training.hpp"

using namespace mmssl;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-3;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradSeeds = 10;
constexpr double kGradSeconds = 60.0;
constexpr double kOracleTolerance = 1e-9;
constexpr double kHingeTolerance = 1e-12;
constexpr double kInvarianceTolerance = 1e-9;
constexpr std::size_t kConvergenceEpochs = 50;
constexpr double kConvergenceRatio = 0.5;
constexpr double kRunSeconds = 300.0;
constexpr double kTransferGap = 0.15;
constexpr double kMonotoneSlack = 0.03;
constexpr double kTenPercentShare = 0.95;
constexpr double kSweepEta = 0.2;
constexpr std::size_t kSamples = 2000;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

Dataset make_data(double eta, std::uint64_t seed) {
  GenSpec spec;
  spec.n_samples = kSamples;
  spec.eta = eta;
  spec.seed = seed;
  return generate(spec);
}

// Every encoder-bytes comparison made around a probe or sweep.
struct FreezeLedger {
  std::size_t checks = 0;
  std::size_t changed = 0;

  template <typename F>
  auto around(const Model& model, F&& f) {
    const auto before = model.encoder_bytes();
    auto out = f();
    ++checks;
    changed += model.encoder_bytes() != before;
    return out;
  }
};

struct Shared {
  // Pre-trained models from the convergence runs, keyed by (method, seed).
  std::map<std::pair<Method, std::uint64_t>, Model> models;
  FreezeLedger freeze;
};

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto start = Clock::now();
  const auto cases = run_gradcheck_suite(kGradSeeds, kGradTolerance, kGradStep);
  const double elapsed = seconds_since(start);
  std::set<std::string> ops;
  double worst = 0.0;
  std::size_t failed = 0;
  for (const auto& c : cases) {
    ops.insert(c.op);
    worst = std::max(worst, c.max_rel_error);
    failed += !c.passed;
  }
  const auto required = gradcheck_operations();
  bool covered = true;
  for (const auto& r : required) covered = covered && ops.count(r);
  Verdict v;
  v.pass = failed == 0 && covered && elapsed < kGradSeconds;
  v.detail = std::to_string(cases.size()) + " checks over " + std::to_string(ops.size()) + " ops, " +
             std::to_string(failed) + " failed, worst relative error " + fmt(worst, 3) + ", " + fmt(elapsed, 3) + " s";
  return v;
}

Tensor eye_rows(Index n, Index d) { return Tensor::from_matrix(Matrix::Identity(n, d)); }

Verdict analytic_oracles() {
  Verdict v;
  Graph g;
  auto value = [](const Var& x) { return x.value().item(); };

  const double ln3 = value(nt_xent(g.constant(eye_rows(4, 4)), 1.0));
  const double infonce = value(mm_infonce(g.constant(eye_rows(2, 2)), g.constant(eye_rows(2, 2)), 1.0, 0.5));
  LossConfig cfg;
  cfg.margin = 0.2;
  const double hinge = value(weighted_hinge(g.constant(Tensor::matrix({{1, 0}, {0, 1}})),
                                            g.constant(Tensor::matrix({{0.6, 0.8}, {0, 1}})), cfg));

  Rng rng(5);
  std::normal_distribution<double> d;
  auto random_rows = [&](Index n) {
    Tensor t = Tensor::zeros({n, 5});
    for (double& x : t.data()) x = d(rng);
    return g.constant(t);
  };
  const auto a = random_rows(1), b = random_rows(1), c = random_rows(1);
  const std::vector<double> single{
      value(nt_xent(stack_views(a, a), 0.1)),
      value(nt_xent(stack_views(a, b), 0.1)),
      value(mm_infonce(a, b, 0.1, 0.5)),
      value(mm_simclr_loss(stack_views(a, c), a, b, cfg)),
      value(ext_pie_loss(a, b, c, b, a, cfg)),
  };

  const double e1 = std::abs(ln3 - std::log(3.0));
  const double e2 = std::abs(infonce - std::log1p(std::exp(-1.0)));
  const double e3 = std::abs(hinge - 0.1);
  bool zeros = true;
  for (double s : single) zeros = zeros && s == 0.0;
  v.pass = e1 <= kOracleTolerance && e2 <= kOracleTolerance && e3 <= kHingeTolerance && zeros;
  v.detail = "|nt_xent - ln 3| " + fmt(e1, 3) + ", |mm_infonce - ln(1+e^-1)| " + fmt(e2, 3) + ", |hinge - 0.1| " +
             fmt(e3, 3) + ", N=1 losses " + (zeros ? "all exactly 0" : "not all 0");
  return v;
}

Verdict invariances() {
  std::mt19937_64 rng(70);
  std::normal_distribution<double> dist;
  const Index d = 6, n = 5;
  Matrix q = Matrix::NullaryExpr(d, d, [&] { return dist(rng); });
  q = Eigen::HouseholderQR<Matrix>(q).householderQ();
  auto rand_bank = [&](Index rows) { return Matrix(Matrix::NullaryExpr(rows, d, [&] { return dist(rng); })); };
  std::vector<Matrix> banks;
  for (int k = 0; k < 5; ++k) banks.push_back(rand_bank(n));
  const Matrix views = rand_bank(2 * n);
  const std::vector<Index> perm{3, 0, 4, 1, 2};

  auto evaluate = [&](auto tb, auto tv) {
    Graph g;
    auto c = [&](const Matrix& m) { return g.constant(Tensor::from_matrix(tb(m))); };
    auto cv = g.constant(Tensor::from_matrix(tv(views)));
    LossConfig sum_cfg, hard_cfg;
    hard_cfg.negative_mode = NegativeMode::hardest;
    return std::vector<double>{
        nt_xent(cv, 0.1).value().item(),
        weighted_hinge(c(banks[0]), c(banks[1]), sum_cfg).value().item(),
        weighted_hinge(c(banks[0]), c(banks[1]), hard_cfg).value().item(),
        mm_infonce(c(banks[0]), c(banks[1]), 0.1, 0.3).value().item(),
        mm_simclr_loss(cv, c(banks[0]), c(banks[1]), sum_cfg).value().item(),
        ext_pie_loss(c(banks[0]), c(banks[1]), c(banks[2]), c(banks[3]), c(banks[4]), sum_cfg).value().item(),
    };
  };
  auto same = [](const Matrix& m) { return m; };
  auto rot = [&](const Matrix& m) { return Matrix(m * q); };
  auto scale_rows = [](const Matrix& m) {
    Matrix out = m;
    for (Index i = 0; i < out.rows(); ++i) out.row(i) *= 0.05 + 2.5 * static_cast<double>(i + 1);
    return out;
  };
  auto permute = [&](const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
    return out;
  };
  auto permute_views = [&](const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < n; ++i) {
      out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
      out.row(i + n) = m.row(perm[static_cast<std::size_t>(i)] + n);
    }
    return out;
  };

  const auto base = evaluate(same, same);
  const std::vector<std::pair<std::string, std::vector<double>>> transformed{
      {"rotation", evaluate(rot, rot)},
      {"row scaling", evaluate(scale_rows, scale_rows)},
      {"permutation", evaluate(permute, permute_views)},
  };
  Verdict v;
  for (const auto& [name, got] : transformed) {
    double worst = 0.0;
    for (std::size_t k = 0; k < base.size(); ++k) worst = std::max(worst, std::abs(got[k] - base[k]));
    v.pass = v.pass && worst < kInvarianceTolerance;
    v.detail += (v.detail.empty() ? "" : ", ") + name + " max change " + fmt(worst, 3);
  }
  return v;
}

Verdict convergence(Shared& shared) {
  Verdict v;
  std::ostringstream detail;
  for (std::uint64_t seed : kSeeds) {
    const Dataset data = make_data(0.0, seed);
    for (Method m : kAllMethods) {
      TrainConfig cfg;
      cfg.method = m;
      cfg.epochs = kConvergenceEpochs;
      cfg.seed = seed;
      const auto start = Clock::now();
      auto res = pretrain(cfg, data, default_lexicon(data.dims.vocab));
      const double elapsed = seconds_since(start);
      const double first = res.metrics.rows.front().loss;
      const double last = res.metrics.rows.back().loss;
      const bool ok = last < kConvergenceRatio * first && elapsed < kRunSeconds;
      v.pass = v.pass && ok;
      std::cout << "  seed " << seed << ' ' << method_name(m) << ": epoch 1 " << fmt(first) << ", epoch "
                << kConvergenceEpochs << ' ' << fmt(last) << ", ratio " << fmt(last / first, 3) << ", "
                << fmt(elapsed, 3) << " s" << (ok ? "" : "  <- fails") << std::endl;
      if (!ok) detail << (detail.tellp() ? "; " : "") << method_name(m) << " seed " << seed << " ratio "
                      << fmt(last / first, 3);
      if (m == Method::mm_simclr || m == Method::ext_pie_net) shared.models.emplace(std::pair{m, seed}, std::move(res.model));
    }
  }
  v.detail = v.pass ? "every method and seed below " + fmt(kConvergenceRatio) + " x epoch-1 loss within budget"
                    : "failing runs: " + detail.str();
  return v;
}

Model pretrained_or_train(Shared& shared, Method m, std::uint64_t seed, const Dataset& data) {
  auto it = shared.models.find({m, seed});
  if (it != shared.models.end()) return it->second;
  TrainConfig cfg;
  cfg.method = m;
  cfg.epochs = kConvergenceEpochs;
  cfg.seed = seed;
  return pretrain(cfg, data, default_lexicon(data.dims.vocab)).model;
}

Verdict transfer(Shared& shared) {
  Verdict v;
  std::ostringstream detail;
  for (std::uint64_t seed : kSeeds) {
    const Dataset data = make_data(0.0, seed);
    ProbeConfig probe;
    probe.seed = seed;
    Model random(data.dims, ArchConfig{});
    random.init(derive_seed(seed, "random-init"));
    random.freeze_encoders();
    const double base = shared.freeze.around(random, [&] { return linear_probe(random, data, probe); })
                            .final_row("test")
                            .accuracy.value();
    detail << (seed == kSeeds.front() ? "" : "; ") << "seed " << seed << " random " << fmt(base, 3);
    for (Method m : {Method::mm_simclr, Method::ext_pie_net}) {
      Model model = pretrained_or_train(shared, m, seed, data);
      model.freeze_encoders();
      const double acc = shared.freeze.around(model, [&] { return linear_probe(model, data, probe); })
                             .final_row("test")
                             .accuracy.value();
      const double gap = acc - base;
      v.pass = v.pass && gap >= kTransferGap;
      detail << ", " << method_name(m) << ' ' << fmt(acc, 3) << " (gap " << fmt(gap, 3) << ")";
    }
  }
  v.detail = detail.str();
  return v;
}

Verdict label_efficiency(Shared& shared) {
  const std::uint64_t seed = kSeeds.front();
  const Dataset data = make_data(kSweepEta, seed);
  SweepConfig sweep;
  sweep.head.seed = seed;

  Verdict v;
  std::ostringstream detail;
  std::optional<std::pair<double, double>> strongest;  // (50% score, 10% score)
  for (Method m : {Method::mm_simclr, Method::ext_pie_net}) {
    TrainConfig cfg;
    cfg.method = m;
    cfg.epochs = kConvergenceEpochs;
    cfg.seed = seed;
    Model model = pretrain(cfg, data, default_lexicon(data.dims.vocab)).model;
    model.freeze_encoders();
    const auto blocks = shared.freeze.around(model, [&] { return finetune_sweep(model, data, sweep); });
    std::map<double, double> f1;
    for (const auto& b : blocks) f1[b.fraction.value()] = b.final_row("test").macro_f1.value();
    bool monotone = true;
    double previous = -1.0;
    detail << (detail.tellp() ? "; " : "") << method_name(m);
    for (const auto& [fraction, score] : f1) {
      monotone = monotone && score >= previous - kMonotoneSlack;
      previous = std::max(previous, score);
      detail << ' ' << fmt(100 * fraction, 3) << "%=" << fmt(score, 3);
    }
    v.pass = v.pass && monotone;
    if (!monotone) detail << " (not monotone)";
    if (!strongest || f1.at(0.5) > strongest->first) strongest = std::pair{f1.at(0.5), f1.at(0.1)};
  }
  const double share = strongest->second / strongest->first;
  v.pass = v.pass && share >= kTenPercentShare;
  detail << "; stronger method 10%/50% = " << fmt(share, 3);
  v.detail = detail.str();
  return v;
}

Verdict metric_oracle() {
  Rng rng(2024);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index classes = 2 + trial % 5;
    std::uniform_int_distribution<Index> pick(0, classes - 1);
    const std::size_t n = 20 + static_cast<std::size_t>(trial);
    std::vector<Index> pred(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = pick(rng);
      y[i] = pick(rng);
    }
    std::vector<std::vector<long>> conf(static_cast<std::size_t>(classes),
                                        std::vector<long>(static_cast<std::size_t>(classes), 0));
    for (std::size_t i = 0; i < n; ++i) ++conf[static_cast<std::size_t>(y[i])][static_cast<std::size_t>(pred[i])];
    double total = 0.0;
    for (std::size_t c = 0; c < conf.size(); ++c) {
      long col = 0, row = 0;
      for (std::size_t k = 0; k < conf.size(); ++k) {
        col += conf[k][c];
        row += conf[c][k];
      }
      const double tp = static_cast<double>(conf[c][c]);
      const double p = col ? tp / static_cast<double>(col) : 0.0;
      const double r = row ? tp / static_cast<double>(row) : 0.0;
      total += p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    mismatches += macro_f1(pred, y, classes) != total / static_cast<double>(classes);
  }
  return {mismatches == 0, std::to_string(100 - mismatches) + "/100 vectors match exactly"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + MMSSL_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict cli_reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "mmssl_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir / "replay");
  const fs::path log = dir / "log.txt";
  auto q = [&](const std::string& name) { return "\"" + (dir / name).string() + "\""; };
  const std::string arch = " --embed-dim 32 --heads 4";

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data --n 400 --eta 0.1 --seed 9 --out " + q("d.txt"), ""},
      {"pretrain --method ext-pie-net --epochs 3 --seed 9 --data " + q("d.txt") + " --out " + q("m.ckpt") + arch,
       "m.ckpt.csv"},
      {"probe --epochs 5 --seed 9 --data " + q("d.txt") + " --checkpoint " + q("m.ckpt") + " --metrics " +
           q("probe.csv"),
       "probe.csv"},
      {"sweep --epochs 5 --runs 2 --seed 9 --data " + q("d.txt") + " --checkpoint " + q("m.ckpt") + " --metrics " +
           q("sweep.csv"),
       "sweep.csv"},
      {"gradcheck --seeds 2 --report " + q("gc.csv"), "gc.csv"},
  };
  Verdict v;
  std::size_t compared = 0;
  for (const auto& [args, csv] : commands) {
    if (run_cli(args, log) != 0) return {false, "command failed: " + args + "\n" + slurp(log)};
    if (csv.empty()) continue;
    const fs::path manifest = dir / (csv == "m.ckpt.csv" ? "m.ckpt.manifest.json" : csv + ".manifest.json");
    if (run_cli("rerun --manifest \"" + manifest.string() + "\" --output-dir " + q("replay"), log) != 0) {
      return {false, "rerun failed for " + manifest.string() + "\n" + slurp(log)};
    }
    const bool same = slurp(dir / csv) == slurp(dir / "replay" / csv) && !slurp(dir / csv).empty();
    v.pass = v.pass && same;
    ++compared;
    if (!same) v.detail += csv + " differs; ";
  }
  const bool data_same = run_cli("rerun --manifest " + q("d.txt.manifest.json") + " --output-dir " + q("replay"),
                                 log) == 0 &&
                         slurp(dir / "d.txt") == slurp(dir / "replay" / "d.txt");
  v.pass = v.pass && data_same;
  v.detail += std::to_string(compared) + " CSV outputs (pretrain, probe, sweep, gradcheck) replayed byte-identical" +
              (data_same ? ", dataset too" : ", dataset differs");
  if (v.pass) fs::remove_all(dir);
  return v;
}

Verdict freeze_contract(Shared& shared) {
  // Direct probe and sweep on a trained model, on top of every earlier check.
  GenSpec spec;
  spec.n_samples = 400;
  spec.seed = 3;
  const Dataset data = generate(spec);
  TrainConfig cfg;
  cfg.method = Method::mm_simclr;
  cfg.epochs = 2;
  cfg.arch.embed_dim = 32;
  Model model = pretrain(cfg, data, default_lexicon(data.dims.vocab)).model;
  model.freeze_encoders();
  ProbeConfig probe;
  probe.epochs = 10;
  SweepConfig sweep;
  sweep.head.epochs = 10;
  shared.freeze.around(model, [&] { return linear_probe(model, data, probe); });
  shared.freeze.around(model, [&] { return finetune_sweep(model, data, sweep); });

  bool refused = false;
  model.freeze_encoders(false);
  try {
    linear_probe(model, data, probe);
  } catch (const ContractError&) {
    refused = true;
  }
  return {shared.freeze.changed == 0 && refused,
          std::to_string(shared.freeze.checks) + " probe/sweep runs, " + std::to_string(shared.freeze.changed) +
              " changed encoder bytes; unfrozen encoders " + (refused ? "rejected" : "accepted")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria");
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                              : std::set<int>(only.begin(), only.end());

  Shared shared;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"analytic oracles", analytic_oracles},
      {"invariance suite", invariances},
      {"convergence", [&] { return convergence(shared); }},
      {"transfer", [&] { return transfer(shared); }},
      {"label efficiency", [&] { return label_efficiency(shared); }},
      {"metric oracle", metric_oracle},
      {"reproducibility", cli_reproducibility},
      {"freeze contract", [&] { return freeze_contract(shared); }},
  };

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!selected.count(id)) continue;
    const auto start = Clock::now();
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first << "): " << v.detail
              << " [" << fmt(seconds_since(start), 3) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
