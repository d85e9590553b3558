#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pfda/pfda.hpp"
#include "pfda/experiment/config.hpp"
#include "pfda/experiment/csv.hpp"

namespace pfda::experiment {

inline const char* const kCommands[] = {"simulate", "filter", "smooth", "enkf",
                                        "pmmh",     "pgibbs", "tune-n"};

struct RunOptions {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  unsigned threads = 1;
};

enum ExitCode : int { kSuccess = 0, kConfigFailure = 2, kRuntimeFailure = 3 };

struct Dataset {
  Matrix observations;          // q x T
  std::optional<Matrix> states; // d x (T + 1) when simulated
};

namespace detail {

inline Dataset load_data(const Section& root, const AnyModel& model, std::uint64_t seed) {
  const Section data = root.section("data");
  const bool sim = data.has("simulate");
  const bool file = data.has("file");
  if (sim == file) throw ConfigError(data.path(), "give exactly one of 'simulate' or 'file'");
  if (sim) {
    const Section s = data.section("simulate");
    const std::uint64_t steps = s.count("T");
    if (steps < 1) throw ConfigError(join_key(s.path(), "T"), "must be at least 1");
    const std::uint64_t data_seed = s.count("seed", derive_seed(seed, 0, 0, Purpose::observe));
    return std::visit(
        [&](const auto& m) {
          SimulatedData d = simulate_truth(m, steps, data_seed);
          return Dataset{std::move(d.observations), std::move(d.states)};
        },
        model);
  }
  const std::string path = data.text("file");
  const std::string key = join_key(data.path(), "file");
  Table t;
  try {
    t = read_csv(path);
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
  const std::size_t q = std::visit([](const auto& m) { return m.obs_dim(); }, model);
  if (t.header.empty() || t.header.front() != "t" || t.header.size() != q + 1) {
    throw ConfigError(key, "expected columns t, y_1..y_" + std::to_string(q));
  }
  if (t.values.rows() < 1) throw ConfigError(key, "no observations");
  return Dataset{t.values.rightCols(static_cast<Eigen::Index>(q)).transpose(), std::nullopt};
}

inline ResamplingScheme parse_scheme(const Section& alg) {
  const std::string s = alg.text("scheme", "systematic");
  alg.expect_one_of("scheme", s, {"systematic", "multinomial"});
  return s == "systematic" ? ResamplingScheme::systematic : ResamplingScheme::multinomial;
}

inline FilterOptions filter_options(const Section& alg, std::uint64_t seed, unsigned threads) {
  FilterOptions o;
  o.scheme = parse_scheme(alg);
  const std::string trig = alg.text("resample", "always");
  alg.expect_one_of("resample", trig, {"always", "ess", "never"});
  o.trigger = trig == "always" ? ResampleTrigger::always
              : trig == "ess"  ? ResampleTrigger::ess_below
                               : ResampleTrigger::never;
  o.ess_fraction = alg.number("ess_fraction", 0.5);
  if (!(o.ess_fraction > 0.0 && o.ess_fraction <= 1.0)) {
    throw ConfigError(join_key(alg.path(), "ess_fraction"), "must lie in (0, 1]");
  }
  o.seed = seed;
  o.threads = threads;
  o.storage = StorageMode::none;
  return o;
}

inline std::size_t particle_count(const Section& alg, const std::string& key, std::size_t fallback) {
  const std::size_t n = alg.count(key, fallback);
  if (n < 2) throw ConfigError(join_key(alg.path(), key), "must be at least 2");
  return n;
}

inline std::string model_name(const AnyModel& m) {
  return kModelNames[m.index()];
}

inline bool transition_density(const AnyModel& m) {
  return std::visit([](const auto& x) { return x.has_transition_density(); }, m);
}

inline void require_complete_observations(const Dataset& data, const std::string& command) {
  if (!data.observations.allFinite()) {
    throw ConfigError("data", command + " does not support missing observations");
  }
}

inline void write_states(const std::filesystem::path& out, const Dataset& data) {
  if (!data.states) return;
  const Matrix& x = *data.states;
  std::vector<std::string> header{"t"};
  for (auto& c : indexed_columns("x", x.rows())) header.push_back(c);
  CsvWriter truth((out / "truth.csv").string(), header);
  for (Eigen::Index t = 1; t < x.cols(); ++t) {
    std::vector<double> row{static_cast<double>(t)};
    append(row, x.col(t));
    truth.row(row);
  }
  const Matrix& y = data.observations;
  header = {"t"};
  for (auto& c : indexed_columns("y", y.rows())) header.push_back(c);
  CsvWriter obs((out / "obs.csv").string(), header);
  for (Eigen::Index t = 0; t < y.cols(); ++t) {
    std::vector<double> row{static_cast<double>(t + 1)};
    append(row, y.col(t));
    obs.row(row);
  }
}

inline std::vector<std::string> summary_header(const char* key, Eigen::Index d) {
  std::vector<std::string> h{key};
  for (const char* stem : {"mean", "q05", "q95"}) {
    for (auto& c : indexed_columns(stem, d)) h.push_back(c);
  }
  return h;
}

// Parameter block shared by pmmh, pgibbs and tune-n.
struct ParameterSpec {
  std::vector<std::string> names;
  Vector initial;
};

inline ParameterSpec parameter_spec(const Section& alg, const Section& model_block, const AnyModel& model,
                                    bool required) {
  ParameterSpec spec;
  if (!alg.has("parameters")) {
    if (required) throw ConfigError(join_key(alg.path(), "parameters"), "missing");
    return spec;
  }
  spec.names = alg.texts("parameters");
  if (spec.names.empty()) throw ConfigError(join_key(alg.path(), "parameters"), "must not be empty");
  const std::string mname = model_name(model);
  const auto allowed = estimable_parameters(mname);
  for (const auto& n : spec.names) {
    if (std::find(allowed.begin(), allowed.end(), n) == allowed.end()) {
      throw ConfigError(join_key(alg.path(), "parameters"), "'" + n + "' is not an estimable parameter of " + mname);
    }
  }
  if (mname == "linear_gaussian") {
    const auto& p = std::get<LinearGaussianModel>(model).parameters();
    if (p.state_dim() != 1 || p.obs_dim() != 1) {
      throw ConfigError(join_key(alg.path(), "parameters"),
                        "linear-Gaussian parameters can only be estimated for scalar models");
    }
  }
  if (alg.has("initial")) {
    const auto v = alg.numbers("initial");
    if (v.size() != spec.names.size()) {
      throw ConfigError(join_key(alg.path(), "initial"), "needs one value per parameter");
    }
    spec.initial = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  } else {
    spec.initial.resize(static_cast<Eigen::Index>(spec.names.size()));
    for (std::size_t k = 0; k < spec.names.size(); ++k) {
      const std::string& n = spec.names[k];
      double v;
      if (model_block.has(n)) {
        v = model_block.matrix(n)(0, 0);
      } else if (mname == "linear_gaussian") {
        v = n == "transition" ? std::nan("") : 1.0;
      } else if (mname == "stochastic_volatility") {
        const auto& p = std::get<StochasticVolatilityModel>(model).parameters();
        v = n == "phi" ? p.phi : n == "sigma" ? p.sigma : p.beta;
      } else {
        const Lorenz96Parameters d;
        v = n == "forcing" ? d.forcing : d.obs_sigma;
      }
      spec.initial[static_cast<Eigen::Index>(k)] = v;
    }
  }
  return spec;
}

inline Vector sized_vector(const Section& s, const std::string& key, std::size_t p) {
  auto v = s.numbers(key);
  if (v.size() == 1 && p > 1) v.assign(p, v.front());
  if (v.size() != p) throw ConfigError(join_key(s.path(), key), "needs one value per parameter");
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(p));
}

inline UniformBoxPrior parse_prior(const Section& alg, std::size_t p) {
  const Section prior = alg.section("prior");
  UniformBoxPrior out{sized_vector(prior, "lower", p), sized_vector(prior, "upper", p)};
  for (Eigen::Index k = 0; k < out.lower.size(); ++k) {
    if (!(out.lower[k] < out.upper[k])) throw ConfigError(prior.path(), "lower must be below upper");
  }
  return out;
}

inline GaussianRandomWalk parse_kernel(const Section& alg, std::size_t p) {
  GaussianRandomWalk k{sized_vector(alg, "step_scale", p)};
  for (Eigen::Index i = 0; i < k.scale.size(); ++i) {
    if (!(k.scale[i] > 0.0)) throw ConfigError(join_key(alg.path(), "step_scale"), "must be positive");
  }
  return k;
}

// Builds model type M from the config model block with theta substituted.
template <class M>
auto make_builder(const json& model_block, std::vector<std::string> names) {
  return [model_block, names = std::move(names)](const Vector& theta) -> M {
    const json patched = with_parameters(model_block, names, theta);
    return std::get<M>(build_model(Section(patched, "model")));
  };
}

inline void write_chain(const std::filesystem::path& out, const McmcChain& chain,
                        const std::vector<std::string>& names, bool with_log_lik) {
  std::vector<std::string> header{"iter"};
  for (auto& c : indexed_columns("theta", static_cast<Eigen::Index>(names.size()))) header.push_back(c);
  header.push_back("log_lik_hat");
  header.push_back("accepted");
  CsvWriter csv((out / "chain.csv").string(), header);
  for (std::size_t i = 0; i < chain.states.size(); ++i) {
    std::vector<double> row{static_cast<double>(i)};
    append(row, chain.states[i].theta);
    row.push_back(with_log_lik ? chain.states[i].log_lik_hat : std::nan(""));
    row.push_back(i == 0 ? std::nan("") : static_cast<double>(chain.accepted[i]));
    csv.row(row);
  }
}

inline json chain_summary(const McmcChain& chain, const std::vector<std::string>& names) {
  json s;
  s["iterations"] = chain.iterations();
  s["burn_in"] = chain.burn_in;
  const double rate = chain.acceptance_rate();
  s["acceptance_rate"] = std::isfinite(rate) ? json(rate) : json(nullptr);
  s["failed_estimates"] = chain.failed_estimates;
  json means = json::object();
  for (std::size_t k = 0; k < names.size(); ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = chain.burn_in + 1; i < chain.states.size(); ++i, ++n) {
      sum += chain.states[i].theta[static_cast<Eigen::Index>(k)];
    }
    means[names[k]] = n ? json(sum / static_cast<double>(n)) : json(nullptr);
  }
  s["posterior_mean"] = means;
  return s;
}

}  // namespace detail

// One experiment: parse and validate the config, run the algorithm named by
// `command`, write CSV results and summary.json into the output directory.
class Experiment {
 public:
  explicit Experiment(const RunOptions& opt) : opt_(opt), config_(load_config(opt.config_path)) {
    bool known = false;
    for (const char* c : kCommands) known = known || opt.command == c;
    if (!known) throw ConfigError("command", "unknown subcommand '" + opt.command + "'");
    const Section root(config_, "");
    seed_ = opt.seed ? *opt.seed : root.count("seed", 0);
    const Section model_block = root.section("model");
    try {
      model_.emplace(build_model(model_block));
    } catch (const DomainError& e) {
      throw ConfigError("model", e.what());
    } catch (const NumericalError& e) {
      throw ConfigError("model", e.what());
    }
    if (opt.out) {
      out_ = *opt.out;
    } else if (root.has("output")) {
      out_ = root.section("output").text("directory", "out");
    } else {
      out_ = "out";
    }
    data_ = detail::load_data(root, *model_, seed_);
    validate();
  }

  std::uint64_t seed() const { return seed_; }
  const std::filesystem::path& output_directory() const { return out_; }

  // Writes all outputs; returns summary.json contents.
  json run() {
    std::filesystem::create_directories(out_);
    const auto start = std::chrono::steady_clock::now();
    json summary;
    summary["command"] = opt_.command;
    summary["model"] = detail::model_name(*model_);
    summary["seed"] = seed_;
    summary["T"] = data_.observations.cols();
    if (opt_.command != "simulate") summary["algorithm"] = algorithm_;
    detail::write_states(out_, data_);
    std::optional<AlgorithmError> failure;
    try {
      std::visit([&](const auto& m) { dispatch(m, summary); }, *model_);
    } catch (const AlgorithmError& e) {
      failure = e;
      summary["error"] = e.what();
    }
    summary["runtime_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream((out_ / "summary.json").string()) << summary.dump(2) << '\n';
    if (failure) throw *failure;
    return summary;
  }

 private:
  Section root() const { return Section(config_, ""); }

  Section algorithm() const {
    static const json empty = json::object();
    const Section r = root();
    return r.has("algorithm") ? r.section("algorithm") : Section(empty, "algorithm");
  }

  void validate() {
    const std::string& cmd = opt_.command;
    if (cmd == "simulate") return;
    const Section alg = algorithm();
    const Section model_block = root().section("model");
    const bool has_density = detail::transition_density(*model_);
    const std::string mname = detail::model_name(*model_);
    auto need_density = [&](const std::string& what) {
      if (!has_density) {
        throw ConfigError("model.name", what + " requires a transition density, which " + mname + " lacks");
      }
    };
    if (cmd == "filter") {
      algorithm_ = alg.text("name", "bootstrap");
      alg.expect_one_of("name", algorithm_, {"bootstrap", "auxiliary", "sis"});
      detail::filter_options(alg, seed_, opt_.threads);
      detail::particle_count(alg, "particles", 100);
      if (algorithm_ == "auxiliary") need_density("the auxiliary filter");
      if (alg.has("proposal")) {
        const std::string p = alg.text("proposal");
        alg.expect_one_of("proposal", p, {"bootstrap", "optimal"});
        if (p == "optimal" && mname != "linear_gaussian") {
          throw ConfigError(join_key(alg.path(), "proposal"), "the optimal proposal needs a linear-Gaussian model");
        }
      }
      detail::require_complete_observations(data_, cmd);
    } else if (cmd == "smooth") {
      algorithm_ = alg.text("name", "kitagawa");
      alg.expect_one_of("name", algorithm_, {"kitagawa", "fixed_lag", "ffbs", "backward_simulation"});
      detail::filter_options(alg, seed_, opt_.threads);
      detail::particle_count(alg, "particles", 100);
      if (algorithm_ == "fixed_lag") alg.count("lag");
      if (algorithm_ == "ffbs" || algorithm_ == "backward_simulation") need_density(algorithm_);
      if (algorithm_ == "backward_simulation") detail::particle_count(alg, "paths", 100);
      detail::require_complete_observations(data_, cmd);
    } else if (cmd == "enkf") {
      algorithm_ = alg.text("name", "stochastic");
      alg.expect_one_of("name", algorithm_, {"stochastic", "square_root"});
      if (mname == "stochastic_volatility") {
        throw ConfigError("model.name", "enkf requires a model with linear-Gaussian observations");
      }
      detail::particle_count(alg, "members", 40);
      if (alg.number("inflation", 1.0) < 1.0) throw ConfigError("algorithm.inflation", "must be at least 1");
      if (alg.has("taper_radius")) {
        if (!(alg.number("taper_radius") > 0.0)) throw ConfigError("algorithm.taper_radius", "must be positive");
        if (algorithm_ == "square_root") {
          throw ConfigError("algorithm.taper_radius", "tapering is not available for the square-root variant");
        }
      }
    } else if (cmd == "pmmh" || cmd == "pgibbs") {
      algorithm_ = alg.text("name", cmd);
      alg.expect_one_of("name", algorithm_, {cmd.c_str()});
      const auto spec = detail::parameter_spec(alg, model_block, *model_, true);
      detail::parse_prior(alg, spec.names.size());
      detail::parse_kernel(alg, spec.names.size());
      alg.count("iterations");
      alg.count("burn_in", 0);
      detail::particle_count(alg, "particles", 100);
      if (cmd == "pgibbs") {
        need_density("particle Gibbs");
        alg.flag("ancestor_sampling", false);
      } else {
        detail::filter_options(alg, seed_, opt_.threads);
      }
      detail::require_complete_observations(data_, cmd);
    } else if (cmd == "tune-n") {
      algorithm_ = alg.text("name", "tune-n");
      alg.expect_one_of("name", algorithm_, {"tune-n"});
      detail::parameter_spec(alg, model_block, *model_, false);
      detail::particle_count(alg, "particles", 100);
      detail::particle_count(alg, "replicates", 20);
      if (!(alg.number("target", 1.5) > 0.0)) throw ConfigError("algorithm.target", "must be positive");
      if (alg.count("rounds", 2) < 1) throw ConfigError("algorithm.rounds", "must be at least 1");
      detail::filter_options(alg, seed_, opt_.threads);
      detail::require_complete_observations(data_, cmd);
    }
  }

  template <class M>
  void dispatch(const M& model, json& summary) {
    const std::string& cmd = opt_.command;
    if (cmd == "filter") run_filter(model, summary);
    else if (cmd == "smooth") run_smooth(model, summary);
    else if (cmd == "enkf") run_enkf_command(model, summary);
    else if (cmd == "pmmh") run_pmmh_command(model, summary);
    else if (cmd == "pgibbs") run_pgibbs_command(model, summary);
    else if (cmd == "tune-n") run_tune(model, summary);
  }

  template <class M>
  void run_filter(const M& model, json& summary) {
    const Section alg = algorithm();
    FilterOptions o = detail::filter_options(alg, seed_, opt_.threads);
    const std::size_t n = detail::particle_count(alg, "particles", 100);
    summary["particles"] = n;
    FilterRun run;
    if (algorithm_ == "auxiliary") {
      const std::string proposal =
          alg.text("proposal", std::is_same_v<M, LinearGaussianModel> ? "optimal" : "bootstrap");
      if constexpr (std::is_same_v<M, LinearGaussianModel>) {
        if (proposal == "optimal") {
          run = run_auxiliary_filter(model, LinearGaussianOptimalProposal(model), data_.observations, n, o);
        }
      }
      if (proposal == "bootstrap") {
        run = run_auxiliary_filter(model, BootstrapProposal<M>(model), data_.observations, n, o);
      }
    } else {
      if (algorithm_ == "sis") o.trigger = ResampleTrigger::never;
      run = run_bootstrap_filter(model, data_.observations, n, o);
    }
    const auto d = static_cast<Eigen::Index>(model.state_dim());
    auto header = detail::summary_header("t", d);
    for (const char* c : {"ess", "max_weight", "log_lik_cum"}) header.emplace_back(c);
    CsvWriter csv((out_ / "filter.csv").string(), header);
    for (const FilterSummary& s : run.summaries) {
      std::vector<double> row{static_cast<double>(s.t)};
      append(row, s.mean);
      append(row, s.q05);
      append(row, s.q95);
      row.insert(row.end(), {s.ess, s.max_weight, s.log_lik});
      csv.row(row);
    }
    summary["log_lik"] = run.log_lik;
    summary["final_ess"] = run.summaries.empty() ? json(nullptr) : json(run.summaries.back().ess);
  }

  template <class M>
  void run_smooth(const M& model, json& summary) {
    const Section alg = algorithm();
    FilterOptions o = detail::filter_options(alg, seed_, opt_.threads);
    o.storage = StorageMode::full;
    o.summaries = false;
    const std::size_t n = detail::particle_count(alg, "particles", 100);
    summary["particles"] = n;
    const FilterRun run = run_bootstrap_filter(model, data_.observations, n, o);
    const std::vector<std::size_t> unique = unique_path_counts(run.store);
    std::vector<MarginalEstimate> est;
    if (algorithm_ == "kitagawa") {
      est = trajectory_smoother(run.store);
    } else if (algorithm_ == "fixed_lag") {
      const std::size_t lag = alg.count("lag");
      summary["lag"] = lag;
      est = fixed_lag_smoother(run.store, lag);
    } else {
      if (algorithm_ == "ffbs") {
        const auto w = marginal_smoother(run.store, model, opt_.threads);
        for (std::size_t s = 0; s < w.size(); ++s) est.push_back(summarize_marginal(s, run.store.particles[s], w[s]));
      } else {
        const std::size_t paths = detail::particle_count(alg, "paths", 100);
        summary["paths"] = paths;
        const std::uint64_t bseed = derive_seed(seed_, 0, 0, Purpose::backward);
        const std::vector<Matrix> draws = backward_sample_trajectories(run.store, model, bseed, paths, opt_.threads);
        const std::vector<double> w(paths, 1.0 / static_cast<double>(paths));
        const auto d = static_cast<Eigen::Index>(model.state_dim());
        for (std::size_t s = 0; s <= run.store.final_time(); ++s) {
          Matrix xs(d, static_cast<Eigen::Index>(paths));
          for (std::size_t j = 0; j < paths; ++j) {
            xs.col(static_cast<Eigen::Index>(j)) = draws[j].col(static_cast<Eigen::Index>(s));
          }
          est.push_back(summarize_marginal(s, xs, w));
        }
      }
    }
    const auto d = static_cast<Eigen::Index>(model.state_dim());
    auto header = detail::summary_header("s", d);
    header.emplace_back("unique_paths");
    CsvWriter csv((out_ / "smooth.csv").string(), header);
    for (const MarginalEstimate& e : est) {
      std::vector<double> row{static_cast<double>(e.s)};
      append(row, e.mean);
      append(row, e.q05);
      append(row, e.q95);
      row.push_back(static_cast<double>(unique[e.s]));
      csv.row(row);
    }
    summary["log_lik"] = run.log_lik;
  }

  template <class M>
  void run_enkf_command(const M& model, json& summary) {
    if constexpr (LinearGaussianObserved<M>) {
      const Section alg = algorithm();
      EnkfOptions o;
      o.members = detail::particle_count(alg, "members", 40);
      o.inflation = alg.number("inflation", 1.0);
      if (alg.has("taper_radius")) o.taper_radius = alg.number("taper_radius");
      o.variant = algorithm_ == "square_root" ? EnkfVariant::square_root : EnkfVariant::stochastic;
      o.divergence_bound = alg.number("divergence_bound", o.divergence_bound);
      o.seed = seed_;
      o.threads = opt_.threads;
      std::optional<Matrix> truth;
      if (data_.states) truth = data_.states->rightCols(data_.states->cols() - 1);
      const EnkfRun run = run_enkf(model, data_.observations, o, truth);
      const auto d = static_cast<Eigen::Index>(model.state_dim());
      std::vector<std::string> header{"t"};
      for (const char* stem : {"mean", "spread"}) {
        for (auto& c : indexed_columns(stem, d)) header.push_back(c);
      }
      header.emplace_back("rmse");
      CsvWriter csv((out_ / "enkf.csv").string(), header);
      double rmse_sum = 0.0;
      for (const EnkfStepSummary& s : run.steps) {
        std::vector<double> row{static_cast<double>(s.t)};
        append(row, s.mean);
        append(row, s.spread);
        row.push_back(s.rmse);
        csv.row(row);
        rmse_sum += s.rmse;
      }
      summary["members"] = o.members;
      summary["mean_rmse"] = truth && !run.steps.empty()
                                 ? json(rmse_sum / static_cast<double>(run.steps.size()))
                                 : json(nullptr);
    }
  }

  template <class M>
  void run_pmmh_command(const M&, json& summary) {
    const Section alg = algorithm();
    const Section model_block = root().section("model");
    const auto spec = detail::parameter_spec(alg, model_block, *model_, true);
    const std::size_t p = spec.names.size();
    FilterOptions o = detail::filter_options(alg, seed_, opt_.threads);
    const std::size_t n = detail::particle_count(alg, "particles", 100);
    const BootstrapLikelihood estimator(detail::make_builder<M>(config_["model"], spec.names),
                                        data_.observations, n, o);
    McmcChain chain;
    std::optional<AlgorithmError> failure;
    try {
      chain = run_pmmh(spec.initial, alg.count("iterations"), alg.count("burn_in", 0),
                       detail::parse_prior(alg, p), detail::parse_kernel(alg, p), estimator, seed_);
    } catch (const ChainAborted& e) {
      chain = e.prefix();
      failure = e;
    } catch (const DomainError& e) {
      throw AlgorithmError(std::string("pmmh could not start: ") + e.what(), 0);
    }
    detail::write_chain(out_, chain, spec.names, true);
    json s = detail::chain_summary(chain, spec.names);
    s["log_lik_variance"] = std::isfinite(chain.log_lik_variance()) ? json(chain.log_lik_variance()) : json(nullptr);
    summary.update(s);
    summary["parameters"] = spec.names;
    summary["particles"] = n;
    if (failure) throw *failure;
  }

  template <class M>
  void run_pgibbs_command(const M&, json& summary) {
    if constexpr (CompleteDataModel<M>) {
      const Section alg = algorithm();
      const Section model_block = root().section("model");
      const auto spec = detail::parameter_spec(alg, model_block, *model_, true);
      const std::size_t p = spec.names.size();
      const std::size_t n = detail::particle_count(alg, "particles", 100);
      auto builder = detail::make_builder<M>(config_["model"], spec.names);
      const CompleteDataRandomWalk update(detail::parse_prior(alg, p), builder, data_.observations,
                                          detail::parse_kernel(alg, p));
      CpfOptions co{alg.flag("ancestor_sampling", false), seed_, opt_.threads};
      McmcChain chain;
      std::optional<AlgorithmError> failure;
      try {
        chain = run_particle_gibbs(spec.initial, alg.count("iterations"), alg.count("burn_in", 0), update,
                                   builder, data_.observations, n, co);
      } catch (const ChainAborted& e) {
        chain = e.prefix();
        failure = e;
      } catch (const DomainError& e) {
        throw AlgorithmError(std::string("particle Gibbs could not start: ") + e.what(), 0);
      }
      detail::write_chain(out_, chain, spec.names, false);
      summary.update(detail::chain_summary(chain, spec.names));
      summary["parameters"] = spec.names;
      summary["particles"] = n;
      summary["ancestor_sampling"] = co.ancestor_sampling;
      if (failure) throw *failure;
    }
  }

  template <class M>
  void run_tune(const M& model, json& summary) {
    const Section alg = algorithm();
    const Section model_block = root().section("model");
    const auto spec = detail::parameter_spec(alg, model_block, *model_, false);
    FilterOptions o = detail::filter_options(alg, seed_, opt_.threads);
    auto builder = detail::make_builder<M>(config_["model"], spec.names);
    const M at_theta = spec.names.empty() ? model : builder(spec.initial);
    const Matrix& obs = data_.observations;
    auto factory = [&](std::size_t n) {
      return BootstrapLikelihood([&at_theta](const Vector&) { return at_theta; }, obs, n, o);
    };
    TuningReport report;
    try {
      report = tune_particle_count(factory, spec.initial, detail::particle_count(alg, "particles", 100), seed_,
                                   alg.count("replicates", 20), alg.number("target", 1.5), alg.count("rounds", 2));
    } catch (const DomainError& e) {
      throw AlgorithmError(std::string("tune-n failed: ") + e.what());
    }
    CsvWriter csv((out_ / "tune.csv").string(), {"round", "particles", "log_lik_variance"});
    for (std::size_t r = 0; r < report.rounds.size(); ++r) {
      csv.row({static_cast<double>(r + 1), static_cast<double>(report.rounds[r].particles),
               report.rounds[r].log_lik_variance});
    }
    summary["recommended_particles"] = report.recommended;
    summary["target_variance"] = report.target;
    summary["final_variance"] = report.rounds.back().log_lik_variance;
  }

  RunOptions opt_;
  json config_;
  std::uint64_t seed_ = 0;
  std::optional<AnyModel> model_;
  std::filesystem::path out_;
  Dataset data_;
  std::string algorithm_;
};

// Runs one experiment and maps failures to exit codes: 2 for configuration
// problems, 3 for algorithm failures at run time.
inline int run_experiment(const RunOptions& opt, std::ostream& log = std::cerr) {
  try {
    Experiment exp(opt);
    exp.run();
    return kSuccess;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const CapabilityError& e) {
    log << "error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const AlgorithmError& e) {
    log << "runtime failure: " << e.what() << '\n';
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    log << "runtime failure: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

}  // namespace pfda::experiment
