#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nphmm/experiments.hpp"
#include "nphmm/io.hpp"

namespace nphmm::cli {

using io::json;
namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kOtherError = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericalError = 4,
};

struct Invocation {
  std::string subcommand;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chains;
  bool quiet = false;
  std::string data;
  std::vector<std::string> samples;
  std::vector<std::string> params;
};

namespace detail {

struct Context {
  Invocation inv;
  json config;
  std::ostream& out;
  std::ostream& err;

  void say(const std::string& line) const {
    if (!inv.quiet) out << line << '\n';
  }
};

inline fs::path prepare_out(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("unwritable output path " + dir);
  const fs::path probe = fs::path(dir) / ".nphmm_probe";
  {
    std::ofstream f(probe);
    if (!f) throw DataError("unwritable output path " + dir);
  }
  fs::remove(probe, ec);
  return dir;
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

inline void write_json(const fs::path& path, const json& j) {
  auto f = open_out(path);
  f << j.dump(2) << '\n';
}

inline json section(const json& config, const char* name) {
  return config.contains(name) ? config.at(name) : json::object();
}

inline json manifest_base(const Context& ctx, const std::string& command) {
  json m{{"format", io::kFormatVersion}, {"command", command}};
  if (!ctx.inv.config.empty()) {
    m["config"] = ctx.inv.config;
    m["config_digest"] = io::digest(ctx.config.dump());
  }
  return m;
}

inline json file_digests(const fs::path& dir, const std::vector<std::string>& names) {
  json files = json::object();
  for (const auto& n : names) files[n] = io::file_digest(dir / n);
  return files;
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(Context& ctx) {
  const auto dir = prepare_out(ctx.inv.out);
  const HmmParams truth = io::params_from_json(io::detail::get<json>(ctx.config, "truth"));
  const json sim = section(ctx.config, "simulate");
  const auto n = io::detail::get<std::size_t>(sim, "n");
  const std::uint64_t seed = ctx.inv.seed.value_or(io::detail::get_or<std::uint64_t>(sim, "seed", 0));
  const auto path = simulate(truth, n, seed);
  io::write_observations(dir / "y.txt", path.observations);
  io::write_states(dir / "x.txt", path.states);
  json m = manifest_base(ctx, "simulate");
  m["seed"] = seed;
  m["n"] = n;
  m["theta"] = io::to_json(truth);
  m["theta_digest"] = io::digest(io::to_json(truth).dump());
  m["files"] = file_digests(dir, {"y.txt", "x.txt"});
  write_json(dir / "manifest.json", m);
  ctx.say("simulated " + std::to_string(n) + " observations into " + dir.string());
  return kOk;
}

inline std::string chain_file(std::size_t c) { return "samples_chain" + std::to_string(c) + ".jsonl"; }

inline int cmd_fit(Context& ctx) {
  const auto dir = prepare_out(ctx.inv.out);
  if (ctx.inv.data.empty()) throw ConfigError("fit needs --data <observation file>");
  GibbsConfig gibbs = io::gibbs_from_json(ctx.config);
  if (ctx.inv.seed) gibbs.seed = *ctx.inv.seed;
  const std::size_t chains = ctx.inv.chains.value_or(
      io::detail::get_or<std::size_t>(section(ctx.config, "gibbs"), "chains", 1));
  if (chains < 1) throw ConfigError("--chains must be >= 1");
  std::vector<Observation> y = io::read_observations(ctx.inv.data);
  if (const auto* base = std::get_if<DiscreteBase>(&gibbs.emissions.base)) y = fold_observations(y, *base);

  std::vector<std::future<std::string>> jobs;
  for (std::size_t c = 0; c < chains; ++c) {
    GibbsConfig chain = gibbs;
    chain.chain_id = c;
    jobs.push_back(std::async(std::launch::async, [&y, chain, path = dir / chain_file(c)]() -> std::string {
      std::ofstream f(path, std::ios::binary);
      if (!f) return "cannot write " + path.string();
      try {
        run_chain(y, chain, [&f](const PosteriorSample& s) { f << io::to_json(s).dump() << '\n' << std::flush; });
      } catch (const Error& e) {
        return e.what();
      }
      return {};
    }));
  }
  std::vector<std::string> failures;
  for (auto& j : jobs) {
    auto msg = j.get();
    if (!msg.empty()) failures.push_back(std::move(msg));
  }
  std::vector<std::string> names;
  for (std::size_t c = 0; c < chains; ++c) names.push_back(chain_file(c));
  json m = manifest_base(ctx, "fit");
  m["seed"] = gibbs.seed;
  m["chains"] = chains;
  m["data"] = ctx.inv.data;
  m["data_digest"] = io::file_digest(ctx.inv.data);
  m["gibbs"] = {{"n_iter", gibbs.n_iter}, {"burn_in", gibbs.burn_in}, {"thin", gibbs.thin}};
  m["files"] = file_digests(dir, names);
  if (!failures.empty()) m["errors"] = failures;
  write_json(dir / "manifest.json", m);
  for (const auto& f : failures) ctx.err << "error: " << f << '\n';
  if (!failures.empty()) return kNumericalError;
  ctx.say("wrote " + std::to_string(chains) + " chain(s) of " + std::to_string(gibbs.expected_samples()) +
          " samples into " + dir.string());
  return kOk;
}

// ---------------------------------------------------------------------------
// Metric evaluation shared by `metric` and `report`

struct MetricSettings {
  std::vector<std::string> names;
  std::size_t l = kDefaultBlockLength;
  std::optional<MonteCarloMode> monte_carlo;  // exact when empty
  std::size_t kl_n = 100;
  std::size_t smoothing_block = 1;
  std::vector<std::size_t> smoothing_indices;
  std::map<std::string, double> epsilon;
};

inline MetricSettings metric_settings(const Context& ctx, const HmmParams& truth) {
  const json m = section(ctx.config, "metrics");
  MetricSettings s;
  s.names = io::detail::get_or(m, "names", std::vector<std::string>{});
  s.l = io::detail::get_or<std::size_t>(m, "l", kDefaultBlockLength);
  const auto mode = io::detail::get_or<std::string>(m, "mode", truth.all_discrete() ? "exact" : "monte_carlo");
  if (mode == "monte_carlo") {
    s.monte_carlo = MonteCarloMode{io::detail::get_or<std::size_t>(m, "n_samples", 20'000),
                                   ctx.inv.seed.value_or(io::detail::get_or<std::uint64_t>(m, "seed", 0))};
  } else if (mode != "exact") {
    throw ConfigError("metrics.mode must be 'exact' or 'monte_carlo'");
  }
  s.kl_n = io::detail::get_or<std::size_t>(m, "kl_n", 100);
  s.smoothing_block = io::detail::get_or<std::size_t>(m, "smoothing_block", 1);
  s.smoothing_indices = io::detail::get_or(m, "smoothing_indices", std::vector<std::size_t>{});
  const NeighborhoodRadii r = m.contains("epsilon") ? io::radii_from_json(m.at("epsilon")) : NeighborhoodRadii{};
  for (std::size_t t = 0; t < kTrackedCount; ++t) s.epsilon[kTrackedNames[t]] = r[t];
  for (const auto& name : s.names) {
    if (name == "d_l" || name == "transition" || name == "emission" || name == "kl_bound" || name == "smoothing") continue;
    if (name.rfind("weak:", 0) == 0) {
      parse_test_function(name.substr(5));
      continue;
    }
    throw ConfigError("unknown metric '" + name + "'");
  }
  return s;
}

class MetricEvaluator {
 public:
  MetricEvaluator(const HmmParams& truth, MetricSettings settings, std::vector<Observation> data)
      : truth_(truth), s_(std::move(settings)), data_(std::move(data)) {
    const bool smooth = std::find(s_.names.begin(), s_.names.end(), "smoothing") != s_.names.end();
    if (smooth) {
      if (data_.empty()) throw ConfigError("the smoothing metric needs --data");
      truth_table_ = smoothing_exact(stationary_version(truth_), data_, s_.smoothing_block);
    }
  }

  const MetricSettings& settings() const { return s_; }

  std::string mode_name() const { return s_.monte_carlo ? "monte_carlo" : "exact"; }

  /// Records for one parameter, in the order of the configured names.
  std::vector<io::MetricRecord> evaluate(const std::string& id, std::size_t index, const HmmParams& theta) const {
    if (theta.k() != truth_.k())
      throw DataError("sample " + id + " has k=" + std::to_string(theta.k()) + " but the truth has k=" +
                      std::to_string(truth_.k()));
    DistanceMode mode = ExactMode{};
    if (s_.monte_carlo) mode = MonteCarloMode{s_.monte_carlo->n_samples, mix_seed(s_.monte_carlo->seed, index)};
    std::optional<AlignmentResult> aligned;
    auto alignment = [&]() -> const AlignmentResult& {
      if (!aligned) aligned = align_label_switching(theta, truth_, mode);
      return *aligned;
    };
    std::vector<io::MetricRecord> out;
    for (const auto& name : s_.names) {
      io::MetricRecord r{id, name, 0, mode_name(), 0.0, 0.0};
      if (name == "d_l") {
        r.l = s_.l;
        const auto e = d_l_pseudometric(theta, truth_, s_.l, mode);
        r.value = e.value;
        r.std_error = e.std_error;
      } else if (name == "transition") {
        r.value = alignment().q_distance;
      } else if (name == "emission") {
        r.value = alignment().max_emission_distance();
      } else if (name == "kl_bound") {
        r.l = s_.kl_n;
        const auto b = kl_rate_upper_bound(theta, truth_, s_.kl_n, std::nullopt, mode);
        r.value = b.value();
        r.std_error = b.emission_std_error;
      } else if (name == "smoothing") {
        r.l = s_.smoothing_block;
        const HmmParams relabeled = stationary_version(relabel(theta, alignment().sigma));
        const auto table = smoothing_exact(relabeled, data_, s_.smoothing_block);
        r.value = nphmm::detail::smoothing_deviation(table, *truth_table_, s_.smoothing_indices);
      } else {
        r.l = s_.l;
        const auto e = weak_functional_gap(theta, truth_, s_.l, name.substr(5), mode);
        r.value = e.value;
        r.std_error = e.std_error;
      }
      out.push_back(std::move(r));
    }
    return out;
  }

 private:
  HmmParams truth_;
  MetricSettings s_;
  std::vector<Observation> data_;
  std::optional<SmoothingTable> truth_table_;
};

inline std::vector<Observation> optional_data(const Context& ctx, const HmmParams& truth, const json& config) {
  if (ctx.inv.data.empty()) return {};
  auto y = io::read_observations(ctx.inv.data);
  const json prior = section(config, "prior");
  if (prior.contains("emissions") && truth.all_discrete()) {
    const DpSpec spec = io::dp_from_json(prior.at("emissions"));
    if (const auto* base = std::get_if<DiscreteBase>(&spec.base)) y = fold_observations(y, *base);
  }
  return y;
}

/// Mean and mass-below-epsilon per metric.
inline std::string summary_table(const MetricEvaluator& ev, const std::vector<io::MetricRecord>& records) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "metric" << std::setw(10) << "count" << std::setw(14) << "mean"
     << std::setw(10) << "epsilon" << "mass\n";
  for (const auto& name : ev.settings().names) {
    std::vector<double> v;
    for (const auto& r : records)
      if (r.metric == name) v.push_back(r.value);
    double mean = 0.0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    os << std::left << std::setw(22) << name << std::setw(10) << v.size() << std::setw(14) << std::setprecision(6)
       << mean;
    const auto eps = ev.settings().epsilon.find(name);
    if (eps != ev.settings().epsilon.end())
      os << std::setw(10) << eps->second << mass_below(v, eps->second);
    else
      os << std::setw(10) << "-" << "-";
    os << '\n';
  }
  return os.str();
}

inline json summary_json(const MetricEvaluator& ev, const std::vector<io::MetricRecord>& records) {
  json out = json::array();
  for (const auto& name : ev.settings().names) {
    std::vector<double> v;
    for (const auto& r : records)
      if (r.metric == name) v.push_back(r.value);
    json row{{"metric", name}, {"count", v.size()}};
    const auto eps = ev.settings().epsilon.find(name);
    if (eps != ev.settings().epsilon.end()) {
      row["epsilon"] = eps->second;
      row["mass"] = mass_below(v, eps->second);
    }
    out.push_back(row);
  }
  return out;
}

inline int cmd_metric(Context& ctx) {
  if (ctx.inv.params.empty()) throw ConfigError("metric needs at least one --params file");
  const HmmParams truth = io::params_from_json(io::detail::get<json>(ctx.config, "truth"));
  MetricEvaluator ev(truth, metric_settings(ctx, truth), optional_data(ctx, truth, ctx.config));
  std::vector<io::MetricRecord> records;
  for (std::size_t i = 0; i < ctx.inv.params.size(); ++i) {
    const HmmParams theta = io::params_from_json(io::load_json(ctx.inv.params[i]));
    for (auto& r : ev.evaluate(ctx.inv.params[i], i, theta)) records.push_back(std::move(r));
  }
  std::ostringstream lines;
  for (const auto& r : records) lines << io::to_json(r).dump() << '\n';
  if (!ctx.inv.out.empty()) {
    const auto dir = prepare_out(ctx.inv.out);
    open_out(dir / "metrics.jsonl") << lines.str();
  }
  if (!ctx.inv.quiet) ctx.out << lines.str();
  return kOk;
}

inline int cmd_report(Context& ctx) {
  const auto dir = prepare_out(ctx.inv.out);
  if (ctx.inv.samples.empty()) throw ConfigError("report needs at least one --samples file");
  const HmmParams truth = io::params_from_json(io::detail::get<json>(ctx.config, "truth"));
  MetricEvaluator ev(truth, metric_settings(ctx, truth), optional_data(ctx, truth, ctx.config));
  json m = manifest_base(ctx, "report");
  json inputs = json::object();
  for (const auto& s : ctx.inv.samples) inputs[s] = io::file_digest(s);
  m["samples"] = inputs;
  m["metrics"] = ev.settings().names;
  m["mode"] = ev.mode_name();
  if (ev.settings().monte_carlo) m["seed"] = ev.settings().monte_carlo->seed;
  if (ev.settings().names.empty()) {
    write_json(dir / "manifest.json", m);
    ctx.say("no metrics requested; wrote manifest only");
    return kOk;
  }
  std::vector<io::MetricRecord> records;
  {
    auto f = open_out(dir / "metrics.jsonl");
    std::size_t index = 0;
    for (const auto& path : ctx.inv.samples) {
      for (const auto& s : io::read_samples(path)) {
        const std::string id = "chain" + std::to_string(s.chain_id) + ":iter" + std::to_string(s.iter);
        for (auto& r : ev.evaluate(id, index, s.params)) {
          f << io::to_json(r).dump() << '\n';
          records.push_back(std::move(r));
        }
        ++index;
      }
    }
  }
  const std::string table = summary_table(ev, records);
  open_out(dir / "summary.txt") << table;
  write_json(dir / "summary.json", summary_json(ev, records));
  m["files"] = file_digests(dir, {"metrics.jsonl", "summary.txt", "summary.json"});
  write_json(dir / "manifest.json", m);
  if (!ctx.inv.quiet) ctx.out << table;
  return kOk;
}

// ---------------------------------------------------------------------------

inline std::string consistency_table(const ExperimentReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "metric" << std::setw(10) << "epsilon";
  for (auto n : report.n_grid) os << std::setw(10) << ("n=" + std::to_string(n));
  os << "verdict\n";
  std::size_t v = 0;
  for (std::size_t t = 0; t < kTrackedCount; ++t) {
    if (!report.track[t]) continue;
    const auto& verdict = report.verdicts[v++];
    os << std::left << std::setw(12) << verdict.metric << std::setw(10) << report.epsilon[t];
    for (double mass : verdict.masses) os << std::setw(10) << std::fixed << std::setprecision(3) << mass;
    os.unsetf(std::ios::fixed);
    os << (verdict.pass() ? "PASS" : "FAIL") << '\n';
  }
  std::size_t failed = 0;
  for (const auto& c : report.cells) failed += c.ok() ? 0 : 1;
  if (failed) os << failed << " cell(s) failed; see cells.jsonl\n";
  return os.str();
}

inline int cmd_experiment(Context& ctx) {
  const auto dir = prepare_out(ctx.inv.out);
  const json x = io::detail::get<json>(ctx.config, "experiment");
  const auto kind = io::detail::get_or<std::string>(x, "kind", "consistency");
  json m = manifest_base(ctx, "experiment");
  m["kind"] = kind;
  std::string table;
  std::vector<std::string> files;
  bool pass = false;

  if (kind == "consistency" || kind == "smoothing") {
    ExperimentConfig config = io::experiment_from_json(ctx.config);
    if (ctx.inv.seed) config.seed = *ctx.inv.seed;
    if (kind == "smoothing") config.track = {false, false, false, true};
    const auto report = consistency_experiment(config);
    const json j = io::to_json(report);
    {
      auto f = open_out(dir / "cells.jsonl");
      for (const auto& c : j.at("cells")) f << c.dump() << '\n';
    }
    write_json(dir / "verdicts.json", j.at("verdicts"));
    table = consistency_table(report);
    files = {"cells.jsonl", "verdicts.json", "summary.txt"};
    m["seed"] = config.seed;
    pass = report.pass();
  } else if (kind == "kl_lemma") {
    KlLemmaConfig config{io::params_from_json(io::detail::get<json>(ctx.config, "truth"))};
    config.epsilon = io::detail::get_or(x, "epsilon", config.epsilon);
    config.n_grid = io::detail::get_or(x, "n_grid", config.n_grid);
    config.n_draws = io::detail::get_or(x, "n_draws", config.n_draws);
    config.concentration = io::detail::get_or(x, "concentration", config.concentration);
    config.max_attempts = io::detail::get_or(x, "max_attempts", config.max_attempts);
    config.seed = ctx.inv.seed.value_or(io::detail::get_or<std::uint64_t>(x, "seed", 0));
    const auto report = kl_lemma_experiment(config);
    {
      auto f = open_out(dir / "rows.jsonl");
      for (const auto& r : report.rows)
        f << json{{"draw", r.draw}, {"n", r.n}, {"exact", r.exact}, {"bound", r.bound.value()},
                  {"initial_term", r.bound.initial_term}, {"transition_term", r.bound.transition_term},
                  {"emission_term", r.bound.emission_term}}
                 .dump()
          << '\n';
    }
    std::ostringstream os;
    os << "draws " << config.n_draws << " (attempts " << report.attempts << "), rows " << report.rows.size()
       << "\nbound violations " << report.bound_violations << "\nconclusion violations (rate > 3 eps / q) "
       << report.conclusion_violations << '\n'
       << (report.pass() ? "PASS" : "FAIL") << '\n';
    table = os.str();
    files = {"rows.jsonl", "summary.txt"};
    m["seed"] = config.seed;
    pass = report.pass();
  } else if (kind == "ldir") {
    const DpSpec spec = io::dp_from_json(io::detail::get<json>(section(ctx.config, "prior"), "emissions"));
    const auto n_draws = io::detail::get_or<std::size_t>(x, "n_draws", 10'000);
    const auto z = io::detail::get_or(x, "z", 3.0);
    const auto seed = ctx.inv.seed.value_or(io::detail::get_or<std::uint64_t>(x, "seed", 0));
    const auto partitions =
        io::detail::get<std::vector<std::vector<std::vector<std::size_t>>>>(x, "partitions");
    std::ostringstream os;
    auto f = open_out(dir / "checks.jsonl");
    pass = true;
    for (std::size_t p = 0; p < partitions.size(); ++p) {
      const auto report = ldir_validation(spec, n_draws, partitions[p], z, mix_seed(seed, p));
      for (const auto& c : report.checks) {
        f << json{{"partition", p}, {"check", c.name}, {"observed", c.observed}, {"expected", c.expected},
                  {"stderr", c.std_error}, {"z", c.z()}, {"pass", c.pass}}
                 .dump()
          << '\n';
      }
      os << "partition " << p << ": " << (report.pass() ? "PASS" : "FAIL") << '\n';
      pass = pass && report.pass();
    }
    f.close();
    table = os.str();
    files = {"checks.jsonl", "summary.txt"};
    m["seed"] = seed;
  } else {
    throw ConfigError("unknown experiment kind '" + kind + "'");
  }
  open_out(dir / "summary.txt") << table;
  m["verdict"] = pass ? "PASS" : "FAIL";
  m["files"] = file_digests(dir, files);
  write_json(dir / "manifest.json", m);
  if (!ctx.inv.quiet) ctx.out << table;
  return kOk;
}

// ---------------------------------------------------------------------------

struct PriorCheckRow {
  std::string condition;
  std::string state;
  Verdict verdict;
  std::string detail;
};

/// Floor feasibility, then (E1) and (T) per discrete state, then the
/// integral condition on 1/sigma for Gaussian-mixture priors.
inline std::vector<PriorCheckRow> check_prior_rows(const json& config) {
  std::vector<PriorCheckRow> rows;
  const json& truth_j = io::detail::get<json>(config, "truth");
  const json prior = section(config, "prior");
  const json conditions = section(config, "conditions");
  const auto k = io::detail::get<std::size_t>(truth_j, "k");

  {
    const json tr = section(prior, "transitions");
    const double q = io::detail::get_or(tr, "q_floor", io::detail::get_or(truth_j, "q_floor", 0.0));
    const auto qs = io::detail::get_or(truth_j, "Q", std::vector<double>{});
    PriorCheckRow row{"floor", "-", Verdict::holds, ""};
    if (!(q >= 0.0) || q * static_cast<double>(k) > 1.0 + kConstructionTolerance) {
      row.verdict = Verdict::fails;
      row.detail = "infeasible: q_floor * k = " + std::to_string(q * static_cast<double>(k)) + " > 1";
    } else if (std::any_of(qs.begin(), qs.end(), [q](double v) { return v < q - kConstructionTolerance; })) {
      row.verdict = Verdict::fails;
      row.detail = "true Q has an entry below the prior floor " + std::to_string(q);
    } else {
      row.detail = "q_floor * k = " + std::to_string(q * static_cast<double>(k)) + " <= 1";
    }
    rows.push_back(row);
  }

  const json emissions = io::detail::get_or(truth_j, "emissions", json::array());
  std::optional<DpSpec> dp;
  if (prior.contains("emissions")) dp = io::dp_from_json(prior.at("emissions"));

  std::vector<std::optional<PmfDescriptor>> truth_pmfs(k);
  if (conditions.contains("truth_pmfs")) {
    const auto& list = conditions.at("truth_pmfs");
    if (list.size() != k) throw ConfigError("conditions.truth_pmfs needs one descriptor per state");
    for (std::size_t i = 0; i < k; ++i) truth_pmfs[i] = io::pmf_descriptor_from_json(list[i]);
  } else {
    for (std::size_t i = 0; i < k && i < emissions.size(); ++i)
      if (io::detail::get<std::string>(emissions[i], "family") == "discrete")
        truth_pmfs[i] = FinitePmf{io::detail::get<std::vector<double>>(emissions[i], "probs")};
  }
  std::optional<PmfDescriptor> g0;
  if (conditions.contains("base_pmf")) {
    g0 = io::pmf_descriptor_from_json(conditions.at("base_pmf"));
  } else if (dp) {
    if (const auto* b = std::get_if<DiscreteBase>(&dp->base)) {
      FinitePmf f{b->probs};
      if (b->tail_mass > 0.0) f.probs.push_back(b->tail_mass);
      g0 = f;
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (!truth_pmfs[i]) continue;
    const std::string state = std::to_string(i);
    if (g0) {
      const auto r = check_E1(*truth_pmfs[i], *g0);
      rows.push_back({"E1", state, r.verdict, r.detail});
    } else {
      rows.push_back({"E1", state, Verdict::inconclusive, "no discrete base measure given"});
    }
    const auto t = check_T(*truth_pmfs[i]);
    rows.push_back({"T", state, t.verdict, t.detail});
  }

  std::optional<ScaleDescriptor> scales;
  if (conditions.contains("scale_base")) {
    scales = io::scale_descriptor_from_json(conditions.at("scale_base"));
  } else if (dp) {
    if (const auto* b = std::get_if<NormalInverseGammaBase>(&dp->base)) scales = SigmaSquaredInverseGamma{b->shape, b->scale};
  }
  if (scales) {
    const auto r = check_B1_base_integral(*scales);
    rows.push_back({"eqrk", "-", r.verdict, r.detail});
  }
  return rows;
}

inline int cmd_check_prior(Context& ctx) {
  const auto rows = check_prior_rows(ctx.config);
  std::ostringstream os;
  os << std::left << std::setw(10) << "condition" << std::setw(8) << "state" << std::setw(14) << "verdict"
     << "detail\n";
  for (const auto& r : rows)
    os << std::left << std::setw(10) << r.condition << std::setw(8) << r.state << std::setw(14) << to_string(r.verdict)
       << r.detail << '\n';
  if (!ctx.inv.out.empty()) {
    const auto dir = prepare_out(ctx.inv.out);
    auto f = open_out(dir / "check_prior.jsonl");
    for (const auto& r : rows)
      f << json{{"condition", r.condition}, {"state", r.state}, {"verdict", to_string(r.verdict)}, {"detail", r.detail}}
               .dump()
        << '\n';
  }
  if (!ctx.inv.quiet) ctx.out << os.str();
  return kOk;
}

}  // namespace detail

/// Parses and runs one invocation; args exclude the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Finite-state HMMs with nonparametric emissions"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;
  std::size_t chains = 0;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", inv.config, "configuration file");
    if (needs_config) c->required();
    sub->add_option("--out", inv.out, "output directory");
    sub->add_option("--seed", seed, "seed override");
    sub->add_flag("--quiet", inv.quiet, "suppress console output");
  };
  auto* simulate_cmd = app.add_subcommand("simulate", "simulate observations from the truth");
  add_common(simulate_cmd, true);
  auto* fit_cmd = app.add_subcommand("fit", "run the Gibbs sampler on an observation file");
  add_common(fit_cmd, true);
  fit_cmd->add_option("--data", inv.data, "observation file")->required();
  fit_cmd->add_option("--chains", chains, "number of chains");
  auto* metric_cmd = app.add_subcommand("metric", "evaluate metrics for parameter files against the truth");
  add_common(metric_cmd, true);
  metric_cmd->add_option("--params", inv.params, "parameter file(s)")->required();
  metric_cmd->add_option("--data", inv.data, "observation file (smoothing metric)");
  auto* experiment_cmd = app.add_subcommand("experiment", "run an experiment grid");
  add_common(experiment_cmd, true);
  auto* check_cmd = app.add_subcommand("check-prior", "check prior conditions against the truth");
  add_common(check_cmd, true);
  auto* report_cmd = app.add_subcommand("report", "evaluate metrics over posterior sample files");
  add_common(report_cmd, true);
  report_cmd->add_option("--samples", inv.samples, "sample file(s)")->required();
  report_cmd->add_option("--data", inv.data, "observation file (smoothing metric)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  CLI::App* sub = app.get_subcommands().front();
  inv.subcommand = sub->get_name();
  if (sub->count("--seed")) inv.seed = seed;
  if (sub->get_name() == "fit" && sub->count("--chains")) inv.chains = chains;

  try {
    json config;
    try {
      config = io::load_json(inv.config);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    detail::Context ctx{inv, std::move(config), out, err};
    if (inv.subcommand == "simulate") return detail::cmd_simulate(ctx);
    if (inv.subcommand == "fit") return detail::cmd_fit(ctx);
    if (inv.subcommand == "metric") return detail::cmd_metric(ctx);
    if (inv.subcommand == "experiment") return detail::cmd_experiment(ctx);
    if (inv.subcommand == "check-prior") return detail::cmd_check_prior(ctx);
    return detail::cmd_report(ctx);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const BudgetError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kOtherError;
  }
}

}  // namespace nphmm::cli
