#include "dotsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "dotsim/error.hpp"
#include "dotsim/evaluation.hpp"
#include "dotsim/rng.hpp"

namespace dotsim::experiment {
namespace {

constexpr std::array<Preset, 2> kPresets{{
    {"movielens-final", 0.002, 8, 0.005, 256},
    {"pinterest-final", 0.007, 10, 0.01, 256},
}};

// Runs fn(0..n-1) on up to `workers` threads; rethrows the first failure.
void run_jobs(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

RatingCorpus load_ratings(const fs::path& path) {
  auto in = open_input(path);
  try {
    return parse_ratings(in);
  } catch (const ParseError& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
}

EvalSet load_negatives(const fs::path& path) {
  auto in = open_input(path);
  try {
    return parse_negatives(in);
  } catch (const ParseError& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
}

// Grows the corpus so every user and item in the eval set has a row.
void cover(RatingCorpus& corpus, const EvalSet& eval_set) {
  for (const auto& c : eval_set.cases) {
    corpus.num_users = std::max<std::size_t>(corpus.num_users, std::size_t{c.user} + 1);
    corpus.num_items = std::max<std::size_t>(corpus.num_items, std::size_t{c.positive} + 1);
    for (const Index i : c.negatives) corpus.num_items = std::max<std::size_t>(corpus.num_items, std::size_t{i} + 1);
  }
  corpus.positives.resize(corpus.num_users);
}

std::string dataset_label(const TrainEvalConfig& config) {
  if (!config.dataset.empty()) return config.dataset;
  std::string stem = config.train.filename().string();
  return stem.substr(0, stem.find('.'));
}

LearnedConfig learned_config(const TrainEvalConfig& config, std::uint64_t seed) {
  LearnedConfig lc;
  lc.sgd = config.sgd;
  lc.sgd.seed = seed;
  lc.adam = config.adam;
  lc.head_lambda = config.head_lambda;
  return lc;
}

struct RunOutput {
  EvalRow row;
  std::string metrics_log;
  std::string checkpoint;
};

RunOutput train_and_evaluate(const RatingCorpus& corpus, const EvalSet& eval_set,
                             const TrainEvalConfig& config, std::uint64_t seed, bool keep_artifacts) {
  RunOutput out;
  out.row.model = config.model;
  out.row.dataset = dataset_label(config);
  out.row.seed = std::to_string(seed);
  const EvalOptions final_opts{.k = config.k, .workers = 1, .warn_on_ties = true};

  if (config.model == "popularity") {
    const auto r = evaluate_static(popularity_scores(corpus), eval_set, final_opts);
    out.row.hr = r.hr;
    out.row.ndcg = r.ndcg;
    return out;
  }

  const std::size_t d = config.embedding_dim();
  out.row.d = d;
  out.row.epoch = config.sgd.epochs;

  std::ostringstream log;
  log << "epoch,mean_train_loss,hr@" << config.k << ",ndcg@" << config.k << '\n';
  const EpochCallback on_epoch = [&](std::size_t epoch, double loss, const ModelParams& params) {
    if (!keep_artifacts) return;
    log << epoch << ',' << format_number(loss) << ',';
    if (config.eval_every > 0 && epoch % config.eval_every == 0) {
      const auto r = evaluate(params, eval_set, {.k = config.k, .workers = 1, .warn_on_ties = false});
      log << format_number(r.hr) << ',' << format_number(r.ndcg);
    } else {
      log << ',';
    }
    log << '\n';
  };

  const ModelKind kind = parse_model_kind(config.model);
  ModelParams params;
  if (kind == ModelKind::kMf) {
    SgdConfig sgd = config.sgd;
    sgd.seed = seed;
    params = train_mf(corpus, sgd, d, true, on_epoch);
  } else if (kind == ModelKind::kNeuMf && config.pretrain) {
    const std::size_t k = config.factor.value_or(d / 3);
    const LearnedConfig mlp = learned_config(config, seed);
    const LearnedConfig gmf = learned_config(config, make_rng({seed, 0x4001})());
    params = pretrain_neumf(corpus, mlp, gmf, learned_config(config, make_rng({seed, 0x4002})()), k, on_epoch);
  } else {
    params = train_learned(corpus, kind, learned_config(config, seed), d, on_epoch);
  }

  const auto r = evaluate(params, eval_set, final_opts);
  out.row.hr = r.hr;
  out.row.ndcg = r.ndcg;
  if (keep_artifacts) {
    out.metrics_log = log.str();
    if (config.checkpoints) {
      std::ostringstream ck(std::ios::binary);
      save_checkpoint(ck, params);
      out.checkpoint = ck.str();
    }
  }
  return out;
}

template <typename T>
void require_nonempty(const std::vector<T>& v, const char* what) {
  if (v.empty()) throw ValidationError(std::string(what) + " grid is empty");
}

}  // namespace

std::span<const Preset> presets() { return kPresets; }

const Preset& find_preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name == name) return p;
  }
  throw ValidationError("unknown preset '" + std::string(name) + "'");
}

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

PrepareResult cmd_prepare(const PrepareConfig& config) {
  const RatingCorpus corpus = load_ratings(config.ratings);
  const TuningSplit split = make_tuning_split(corpus);
  const EvalSet negatives = sample_eval_negatives(split.train, split.heldout, config.num_negatives, config.seed);

  ensure_dir(config.out_dir);
  PrepareResult result;
  result.train = config.out_dir / kTuningTrain;
  result.heldout = config.out_dir / kTuningHeldout;
  result.negatives = config.out_dir / kTuningNegatives;
  result.heldout_count = split.heldout.size();

  std::ostringstream train, heldout, neg;
  write_ratings(train, split.train);
  write_heldout(heldout, split.heldout);
  write_negatives(neg, negatives);
  write_file(result.train, train.str());
  write_file(result.heldout, heldout.str());
  write_file(result.negatives, neg.str());
  return result;
}

void TrainEvalConfig::validate() const {
  if (model != "popularity") {
    (void)parse_model_kind(model);
    if (d.has_value() == factor.has_value()) throw ValidationError("give exactly one of d and factor");
    sgd.validate();
    adam.validate();
    if (pretrain && model != "neumf") throw ValidationError("pretraining applies to neumf only");
    if (pretrain && !factor && *d % 3 != 0) throw ValidationError("pretrained neumf needs d divisible by 3");
  }
  if (k < 1) throw ValidationError("k must be >= 1");
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
}

std::size_t TrainEvalConfig::embedding_dim() const {
  if (model == "popularity") return 0;
  if (d) return *d;
  return predictive_factor_to_dims(factor.value_or(0), parse_model_kind(model)).d;
}

TrainEvalResult cmd_train_eval(const TrainEvalConfig& config) {
  config.validate();
  RatingCorpus corpus = load_ratings(config.train);
  const EvalSet eval_set = load_negatives(config.negatives);
  cover(corpus, eval_set);

  const bool keep = !config.out_dir.empty();
  if (keep) ensure_dir(config.out_dir);
  const std::size_t runs = config.model == "popularity" ? 1 : config.repeats;
  std::vector<RunOutput> outputs(runs);
  run_jobs(runs, config.workers, [&](std::size_t r) {
    outputs[r] = train_and_evaluate(corpus, eval_set, config, config.seed + r, keep);
  });

  TrainEvalResult result;
  for (const auto& o : outputs) result.rows.push_back(o.row);
  result.mean = result.rows.front();
  result.mean.seed = "mean";
  result.mean.hr = result.mean.ndcg = 0.0;
  for (const auto& row : result.rows) {
    result.mean.hr += row.hr;
    result.mean.ndcg += row.ndcg;
  }
  result.mean.hr /= static_cast<double>(runs);
  result.mean.ndcg /= static_cast<double>(runs);

  if (keep) {
    for (const auto& o : outputs) {
      if (o.metrics_log.empty()) continue;
      const std::string tag = o.row.model + "_d" + std::to_string(o.row.d) + "_seed" + o.row.seed;
      write_file(config.out_dir / ("metrics_" + tag + ".csv"), o.metrics_log);
      if (!o.checkpoint.empty()) write_file(config.out_dir / ("model_" + tag + ".ckpt"), o.checkpoint);
    }
  }
  return result;
}

GridResult cmd_grid(const GridConfig& config) {
  const std::vector<double> lambdas = config.lambdas.empty() ? std::vector<double>{config.base.sgd.lambda} : config.lambdas;
  require_nonempty(config.etas, "eta");
  require_nonempty(config.negatives, "negatives");
  TrainEvalConfig base = config.base;
  base.repeats = 1;
  base.validate();

  GridResult result;
  result.inputs = {config.tuning_dir / kTuningTrain, config.tuning_dir / kTuningNegatives};
  RatingCorpus corpus = load_ratings(result.inputs[0]);
  const EvalSet eval_set = load_negatives(result.inputs[1]);
  cover(corpus, eval_set);
  if (base.dataset.empty()) base.dataset = config.tuning_dir.filename().string();

  std::vector<GridRow> cells;
  for (const double eta : config.etas) {
    for (const std::size_t m : config.negatives) {
      for (const double lambda : lambdas) cells.push_back({eta, m, lambda, base.embedding_dim(), 0.0, 0.0});
    }
  }
  run_jobs(cells.size(), config.base.workers, [&](std::size_t c) {
    TrainEvalConfig cfg = base;
    cfg.sgd.eta = cells[c].eta;
    cfg.sgd.m = cells[c].m;
    cfg.sgd.lambda = cells[c].lambda;
    cfg.validate();
    const RunOutput out = train_and_evaluate(corpus, eval_set, cfg, cfg.seed, false);
    cells[c].hr = out.row.hr;
    cells[c].ndcg = out.row.ndcg;
  });
  std::stable_sort(cells.begin(), cells.end(), [](const GridRow& a, const GridRow& b) {
    if (a.hr != b.hr) return a.hr > b.hr;
    return a.ndcg > b.ndcg;
  });
  result.rows = std::move(cells);
  return result;
}

std::size_t resolve_h(std::string_view rule, std::size_t d) {
  if (rule == "d/2") return std::max<std::size_t>(1, d / 2);
  if (rule == "d") return d;
  if (rule == "2d") return 2 * d;
  std::size_t h = 0;
  const auto res = std::from_chars(rule.data(), rule.data() + rule.size(), h);
  if (res.ec != std::errc() || res.ptr != rule.data() + rule.size() || h < 1) {
    throw ValidationError("bad h '" + std::string(rule) + "': use d/2, d, 2d or a positive integer");
  }
  return h;
}

std::vector<synth::SynthReport> cmd_synth(const SynthSweep& sweep) {
  const std::vector<std::size_t> ds = sweep.ds.empty() ? std::vector<std::size_t>{sweep.base.d} : sweep.ds;
  const std::vector<std::string> hs =
      sweep.h_rules.empty() ? std::vector<std::string>{std::to_string(sweep.base.h)} : sweep.h_rules;
  const std::vector<std::size_t> ms = sweep.users.empty() ? std::vector<std::size_t>{sweep.base.M} : sweep.users;

  std::vector<synth::SynthConfig> configs;
  for (const std::size_t d : ds) {
    for (const auto& rule : hs) {
      for (const std::size_t M : ms) {
        synth::SynthConfig c = sweep.base;
        c.d = d;
        c.h = resolve_h(rule, d);
        c.M = M;
        c.validate();
        configs.push_back(c);
      }
    }
  }
  std::vector<synth::SynthReport> reports;
  for (const auto& c : configs) reports.push_back(synth::run_synth(c, sweep.workers));
  return reports;
}

std::vector<BenchRow> cmd_bench(const BenchConfig& config) { return bench_retrieval(config); }

void write_eval_csv(std::ostream& out, const TrainEvalResult& result, std::size_t k) {
  out << "model,dataset,d,seed,epoch,hr@" << k << ",ndcg@" << k << '\n';
  auto row = [&](const EvalRow& r) {
    out << r.model << ',' << r.dataset << ',' << r.d << ',' << r.seed << ',' << r.epoch << ','
        << format_number(r.hr) << ',' << format_number(r.ndcg) << '\n';
  };
  for (const auto& r : result.rows) row(r);
  row(result.mean);
}

void write_grid_csv(std::ostream& out, const GridResult& result, std::size_t k) {
  out << "eta,m,lambda,d,hr@" << k << ",ndcg@" << k << '\n';
  for (const auto& r : result.rows) {
    out << format_number(r.eta) << ',' << r.m << ',' << format_number(r.lambda) << ',' << r.d << ','
        << format_number(r.hr) << ',' << format_number(r.ndcg) << '\n';
  }
}

void write_synth_csv(std::ostream& out, std::span<const synth::SynthReport> reports) {
  out << "d,M,N,h,repeat,train_pairs,rmse_mlp_observed,rmse_mlp_fresh,rmse_dot_empirical,"
         "approx_err_observed,approx_err_fresh,rmse_dot_empirical_observed,approx_err_emp_observed,"
         "approx_err_emp_fresh,epochs_run\n";
  for (const auto& rep : reports) {
    const auto& c = rep.config;
    auto row = [&](const synth::SynthRow& r, const std::string& repeat) {
      out << c.d << ',' << c.M << ',' << c.items() << ',' << c.h << ',' << repeat << ',' << r.train_pairs << ','
          << format_number(r.rmse_mlp_observed) << ',' << format_number(r.rmse_mlp_fresh) << ','
          << format_number(r.rmse_dot_empirical) << ',' << format_number(r.approx_err_observed) << ','
          << format_number(r.approx_err_fresh) << ',' << format_number(r.rmse_dot_empirical_observed) << ','
          << format_number(r.approx_err_emp_observed) << ',' << format_number(r.approx_err_emp_fresh) << ','
          << r.epochs_run << '\n';
    };
    for (const auto& r : rep.rows) row(r, std::to_string(r.repeat));
    if (!rep.rows.empty()) row(rep.mean, "mean");
  }
}

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows) {
  out << "head,d,n,k,median_us_per_query\n";
  for (const auto& r : rows) {
    out << r.head << ',' << r.d << ',' << r.n << ',' << r.k << ',' << format_number(r.median_us_per_query) << '\n';
  }
}

}  // namespace dotsim::experiment
