#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dotsim/error.hpp"
#include "dotsim/experiment.hpp"

namespace {

namespace ex = dotsim::experiment;

// Flat `key = value` file. Blank lines and lines starting with '#' are skipped.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dotsim::IoError("cannot open " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t number = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw dotsim::ParseError(number, path + ": expected key = value");
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return entries;
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

// Splices config-file entries in front of the command-line flags they do not
// already set, so flags always win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path || rest.size() < 2) return rest;
  std::vector<std::string> out(rest.begin(), rest.begin() + 2);  // program, subcommand
  for (const auto& [key, value] : read_config(*path)) {
    if (given_on_command_line(rest, key)) continue;
    if (value == "true") {
      out.push_back("--" + key);
    } else if (value != "false") {
      out.push_back("--" + key + "=" + value);
    }
  }
  out.insert(out.end(), rest.begin() + 2, rest.end());
  return out;
}

void emit(const std::string& out_dir, const std::string& name, const std::string& csv) {
  if (out_dir.empty()) {
    std::cout << csv;
    return;
  }
  std::filesystem::create_directories(out_dir);
  const auto path = std::filesystem::path(out_dir) / name;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << csv)) throw dotsim::IoError("cannot write " + path.string());
}

struct ModelFlags {
  ex::TrainEvalConfig cfg;
  std::string preset;
  bool override_preset = false;
  std::size_t d = 0, factor = 0;
  double head_lambda = -1.0;
  bool no_checkpoints = false;
  CLI::Option* eta = nullptr;
  CLI::Option* m = nullptr;
  CLI::Option* lambda = nullptr;
  CLI::Option* epochs = nullptr;

  void add(CLI::App* app) {
    app->add_option("--dataset", cfg.dataset, "label for the dataset column");
    app->add_option("--model", cfg.model, "mf, gmf, mlp, neumf or popularity")->capture_default_str();
    app->add_option("--d", d, "embedding dimension");
    app->add_option("--factor", factor, "predictive factor (alternative to --d)");
    app->add_option("--preset", preset, "movielens-final or pinterest-final");
    app->add_flag("--override-preset", override_preset, "let explicit flags change preset values");
    eta = app->add_option("--eta", cfg.sgd.eta, "SGD learning rate")->capture_default_str();
    m = app->add_option("--m", cfg.sgd.m, "negatives per positive")->capture_default_str();
    lambda = app->add_option("--lambda", cfg.sgd.lambda, "L2 strength")->capture_default_str();
    epochs = app->add_option("--epochs", cfg.sgd.epochs, "training epochs")->capture_default_str();
    app->add_option("--init-std", cfg.sgd.init_std, "Gaussian init std")->capture_default_str();
    app->add_option("--head-lambda", head_lambda, "L2 strength of GMF weights and tower weights (default: --lambda)");
    app->add_option("--lr", cfg.adam.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--beta1", cfg.adam.beta1)->capture_default_str();
    app->add_option("--beta2", cfg.adam.beta2)->capture_default_str();
    app->add_option("--epsilon", cfg.adam.epsilon)->capture_default_str();
    app->add_flag("--pretrain", cfg.pretrain, "NeuMF from separately trained GMF and MLP");
    app->add_option("--k", cfg.k, "HR/NDCG cutoff")->capture_default_str();
    app->add_option("--seed", cfg.seed)->capture_default_str();
    app->add_option("--workers", cfg.workers, "parallel training runs")->capture_default_str();
    app->add_option("--eval-every", cfg.eval_every, "evaluate into the metrics log every n epochs");
    app->add_flag("--no-checkpoints", no_checkpoints);
  }

  // Applies the preset and the optional values after parsing.
  void finish() {
    if (d > 0) cfg.d = d;
    if (factor > 0) cfg.factor = factor;
    if (head_lambda >= 0.0) cfg.head_lambda = head_lambda;
    cfg.checkpoints = !no_checkpoints;
    if (preset.empty()) return;
    const ex::Preset& p = ex::find_preset(preset);
    const bool touched = eta->count() + m->count() + lambda->count() + epochs->count() > 0;
    if (touched && !override_preset) {
      throw dotsim::ValidationError("preset " + preset +
                                    " fixes --eta, --m, --lambda and --epochs; pass --override-preset to change them");
    }
    if (!eta->count()) cfg.sgd.eta = p.eta;
    if (!m->count()) cfg.sgd.m = p.m;
    if (!lambda->count()) cfg.sgd.lambda = p.lambda;
    if (!epochs->count()) cfg.sgd.epochs = p.epochs;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Dot product vs learned similarity experiments"};
  app.require_subcommand(1);
  std::string out;

  // prepare
  ex::PrepareConfig prep;
  std::string ratings, prep_out;
  auto* prepare = app.add_subcommand("prepare", "write the tuning split and its sampled negatives");
  prepare->add_option("--ratings", ratings, "training .rating file")->required();
  prepare->add_option("--out", prep_out, "output directory")->required();
  prepare->add_option("--seed", prep.seed)->capture_default_str();
  prepare->add_option("--negatives", prep.num_negatives, "negatives per heldout pair")->capture_default_str();

  // train-eval
  ModelFlags te;
  te.cfg.repeats = 8;
  std::string train_path, neg_path, te_out;
  auto* train_eval = app.add_subcommand("train-eval", "train and evaluate with repeated seeds");
  train_eval->add_option("--train", train_path, "training .rating file")->required();
  train_eval->add_option("--test-negatives", neg_path, "evaluation .negative file")->required();
  train_eval->add_option("--repeats", te.cfg.repeats)->capture_default_str();
  train_eval->add_option("--out", te_out, "output directory (CSV to stdout when omitted)");
  te.add(train_eval);

  // grid
  ModelFlags gr;
  ex::GridConfig grid_cfg;
  std::string tuning_dir, grid_out;
  auto* grid = app.add_subcommand("grid", "grid search on the tuning split");
  grid->add_option("--tuning-dir", tuning_dir, "directory written by prepare")->required();
  grid->add_option("--etas", grid_cfg.etas, "learning rates")->delimiter(',');
  grid->add_option("--ms", grid_cfg.negatives, "negatives per positive")->delimiter(',');
  grid->add_option("--lambdas", grid_cfg.lambdas, "L2 strengths (default: --lambda)")->delimiter(',');
  grid->add_option("--out", grid_out, "output directory (CSV to stdout when omitted)");
  gr.add(grid);

  // synth
  ex::SynthSweep sweep;
  std::string synth_out;
  bool d_sweep = false, h_sweep = false;
  auto* synth = app.add_subcommand("synth", "learn a dot product with an MLP");
  synth->add_option("--d", sweep.ds, "embedding dimensions")->delimiter(',');
  synth->add_flag("--d-sweep", d_sweep, "d over powers of two from 1 to 256");
  synth->add_option("--hidden", sweep.h_rules, "hidden sizes: d/2, d, 2d or integers")->delimiter(',');
  synth->add_flag("--hidden-sweep", h_sweep, "hidden over d/2, d, 2d");
  synth->add_option("--M", sweep.users, "user counts")->delimiter(',');
  synth->add_option("--N", sweep.base.N, "items (default M)");
  synth->add_option("--samples-per-user", sweep.base.samples_per_user)->capture_default_str();
  synth->add_option("--train-frac", sweep.base.train_frac)->capture_default_str();
  synth->add_option("--sigma-label", sweep.base.sigma_label)->capture_default_str();
  synth->add_option("--repeats", sweep.base.repeats)->capture_default_str();
  synth->add_option("--epochs", sweep.base.epochs, "epoch cap")->capture_default_str();
  synth->add_option("--batch-size", sweep.base.batch_size)->capture_default_str();
  synth->add_option("--lr", sweep.base.adam.lr)->capture_default_str();
  synth->add_option("--min-improvement", sweep.base.min_improvement)->capture_default_str();
  synth->add_option("--patience", sweep.base.patience)->capture_default_str();
  synth->add_option("--fresh-count", sweep.base.fresh_count, "fresh test examples (default: observed test size)");
  synth->add_option("--seed", sweep.base.seed)->capture_default_str();
  synth->add_option("--workers", sweep.workers)->capture_default_str();
  synth->add_option("--out", synth_out, "output directory (CSV to stdout when omitted)");

  // bench
  dotsim::BenchConfig bench_cfg;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "brute-force retrieval timing, dot vs MLP head");
  bench->add_option("--d", bench_cfg.d_grid, "embedding dimensions")->delimiter(',');
  bench->add_option("--n", bench_cfg.n, "catalog size")->capture_default_str();
  bench->add_option("--k", bench_cfg.k)->capture_default_str();
  bench->add_option("--trials", bench_cfg.trials)->capture_default_str();
  bench->add_option("--queries", bench_cfg.queries, "users per trial")->capture_default_str();
  bench->add_option("--seed", bench_cfg.seed)->capture_default_str();
  bench->add_option("--out", bench_out, "output directory (CSV to stdout when omitted)");

  std::vector<std::string> args(argv, argv + argc);
  args = expand_config(std::move(args));
  std::vector<const char*> cargs;
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), const_cast<char**>(cargs.data()));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::ostringstream csv;
  if (*prepare) {
    prep.ratings = ratings;
    prep.out_dir = prep_out;
    const auto r = ex::cmd_prepare(prep);
    std::cerr << "wrote " << r.train.string() << ", " << r.heldout.string() << ", " << r.negatives.string() << " ("
              << r.heldout_count << " heldout users)\n";
    return 0;
  }
  if (*train_eval) {
    te.finish();
    te.cfg.train = train_path;
    te.cfg.negatives = neg_path;
    te.cfg.out_dir = te_out;
    ex::write_eval_csv(csv, ex::cmd_train_eval(te.cfg), te.cfg.k);
    emit(te_out, "results.csv", csv.str());
  } else if (*grid) {
    gr.finish();
    grid_cfg.tuning_dir = tuning_dir;
    grid_cfg.base = gr.cfg;
    ex::write_grid_csv(csv, ex::cmd_grid(grid_cfg), gr.cfg.k);
    emit(grid_out, "grid.csv", csv.str());
  } else if (*synth) {
    if (d_sweep) sweep.ds = {1, 2, 4, 8, 16, 32, 64, 128, 256};
    if (h_sweep) sweep.h_rules = {"d/2", "d", "2d"};
    const auto reports = ex::cmd_synth(sweep);
    ex::write_synth_csv(csv, reports);
    emit(synth_out, "synth.csv", csv.str());
  } else if (*bench) {
    ex::write_bench_csv(csv, ex::cmd_bench(bench_cfg));
    emit(bench_out, "bench.csv", csv.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dotsim::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
