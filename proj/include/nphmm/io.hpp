#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "nphmm/emissions.hpp"
#include "nphmm/error.hpp"
#include "nphmm/experiments.hpp"
#include "nphmm/hmm.hpp"
#include "nphmm/inference.hpp"
#include "nphmm/metrics.hpp"
#include "nphmm/priors.hpp"

namespace nphmm::io {

using json = nlohmann::json;

inline constexpr const char* kFormatVersion = "nphmm/1";

/// FNV-1a 64-bit digest, hex encoded.
inline std::string digest(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_digest(const std::filesystem::path& path) { return digest(read_text(path)); }

namespace detail {

template <typename T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? get<T>(j, key) : fallback;
}

/// Wraps construction invariants as configuration errors.
template <typename F>
auto checked(const std::string& what, F&& build) {
  try {
    return build();
  } catch (const InvariantError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Emissions and parameters

inline json atoms_to_json(std::span<const GaussianAtom> atoms) {
  json out = json::array();
  for (const auto& a : atoms) out.push_back({{"weight", a.weight}, {"location", a.location}, {"scale", a.scale}});
  return out;
}

inline std::vector<GaussianAtom> atoms_from_json(const json& j) {
  std::vector<GaussianAtom> atoms;
  for (const auto& a : j)
    atoms.push_back({detail::get<double>(a, "weight"), detail::get<double>(a, "location"), detail::get<double>(a, "scale")});
  return atoms;
}

inline json to_json(const EmissionModel& e) {
  if (const auto* d = std::get_if<DiscreteEmission>(&e)) {
    json out{{"family", "discrete"}, {"probs", std::vector<double>(d->probs().begin(), d->probs().end())}};
    if (d->folded_tail()) out["folded_tail"] = true;
    return out;
  }
  if (const auto* g = std::get_if<GaussianMixtureEmission>(&e))
    return {{"family", "gaussian_mixture"}, {"atoms", atoms_to_json(g->atoms())}};
  const auto& t = std::get<TranslatedEmission>(e);
  return {{"family", "translated"}, {"shift", t.shift}, {"atoms", atoms_to_json(t.base.atoms())}};
}

inline EmissionModel emission_from_json(const json& j) {
  const auto family = detail::get<std::string>(j, "family");
  return detail::checked("emission", [&]() -> EmissionModel {
    if (family == "discrete")
      return DiscreteEmission(detail::get<std::vector<double>>(j, "probs"), detail::get_or(j, "folded_tail", false));
    if (family == "gaussian_mixture") return GaussianMixtureEmission(atoms_from_json(detail::get<json>(j, "atoms")));
    if (family == "translated")
      return TranslatedEmission{GaussianMixtureEmission(atoms_from_json(detail::get<json>(j, "atoms"))),
                                detail::get<double>(j, "shift")};
    throw ConfigError("unknown emission family '" + family + "'");
  });
}

inline json to_json(const HmmParams& theta) {
  json emissions = json::array();
  for (const auto& e : theta.emissions()) emissions.push_back(to_json(e));
  const auto& q = theta.transitions();
  return {{"k", theta.k()},
          {"q_floor", q.q_floor()},
          {"Q", std::vector<double>(q.entries().begin(), q.entries().end())},
          {"mu", std::vector<double>(theta.initial().begin(), theta.initial().end())},
          {"emissions", emissions}};
}

/// Parameter document; "mu" defaults to the stationary law of Q.
inline HmmParams params_from_json(const json& j) {
  const auto k = detail::get<std::size_t>(j, "k");
  auto q = detail::checked("transition matrix", [&] {
    return TransitionMatrix(k, detail::get<std::vector<double>>(j, "Q"), detail::get<double>(j, "q_floor"));
  });
  std::vector<EmissionModel> emissions;
  for (const auto& e : detail::get<json>(j, "emissions")) emissions.push_back(emission_from_json(e));
  if (j.contains("mu"))
    return detail::checked("parameters", [&] { return HmmParams(q, detail::get<std::vector<double>>(j, "mu"), emissions); });
  return detail::checked("parameters", [&] {
    HmmParams tmp(q, std::vector<double>(k, 1.0 / static_cast<double>(k)), emissions);
    return stationary_version(tmp);
  });
}

// ---------------------------------------------------------------------------
// Priors and Gibbs configuration

inline DpSpec dp_from_json(const json& j) {
  const auto family = detail::get<std::string>(j, "family");
  DpSpec spec;
  spec.alpha = detail::get<double>(j, "alpha");
  if (family == "dp_discrete") {
    spec.base = DiscreteBase{detail::get<std::vector<double>>(j, "base"), detail::get_or(j, "tail_mass", 0.0)};
    spec.truncation = std::get<DiscreteBase>(spec.base).truncation();
  } else if (family == "dp_gaussian") {
    const auto& b = detail::get<json>(j, "base");
    const auto kind = detail::get_or<std::string>(b, "kind", "normal_inverse_gamma");
    if (kind != "normal_inverse_gamma") throw ConfigError("dp_gaussian base must be conjugate normal_inverse_gamma");
    spec.base = NormalInverseGammaBase{detail::get<double>(b, "mean"), detail::get<double>(b, "kappa"),
                                       detail::get<double>(b, "shape"), detail::get<double>(b, "scale")};
    spec.truncation = detail::get_or<std::size_t>(j, "truncation", kDefaultStickDepth);
  } else {
    throw ConfigError("unknown emission prior family '" + family + "'");
  }
  detail::checked("emission prior", [&] {
    spec.validate();
    return 0;
  });
  return spec;
}

inline json to_json(const DpSpec& spec) {
  if (const auto* d = std::get_if<DiscreteBase>(&spec.base))
    return {{"family", "dp_discrete"}, {"alpha", spec.alpha}, {"base", d->probs}, {"tail_mass", d->tail_mass}};
  const auto& b = std::get<NormalInverseGammaBase>(spec.base);
  return {{"family", "dp_gaussian"},
          {"alpha", spec.alpha},
          {"truncation", spec.truncation},
          {"base", {{"kind", "normal_inverse_gamma"}, {"mean", b.mean}, {"kappa", b.kappa}, {"shape", b.shape}, {"scale", b.scale}}}};
}

/// Gibbs configuration from the "prior" and "gibbs" sections.
inline GibbsConfig gibbs_from_json(const json& config) {
  const auto& prior = detail::get<json>(config, "prior");
  const auto& tr = detail::get<json>(prior, "transitions");
  GibbsConfig g;
  g.transitions = {detail::get<std::vector<double>>(tr, "alpha"), detail::get<double>(tr, "q_floor")};
  g.emissions = dp_from_json(detail::get<json>(prior, "emissions"));
  const std::size_t k = g.transitions.k();
  g.initial = detail::get_or(prior, "initial", std::vector<double>(k, 1.0 / static_cast<double>(k)));
  const json gibbs = config.contains("gibbs") ? config.at("gibbs") : json::object();
  g.n_iter = detail::get_or<std::size_t>(gibbs, "n_iter", 4000);
  g.burn_in = detail::get_or<std::size_t>(gibbs, "burn_in", 2000);
  g.thin = detail::get_or<std::size_t>(gibbs, "thin", 5);
  g.seed = detail::get_or<std::uint64_t>(gibbs, "seed", 0);
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Condition descriptors

inline PmfDescriptor pmf_descriptor_from_json(const json& j) {
  const auto kind = detail::get<std::string>(j, "kind");
  if (kind == "finite") return FinitePmf{detail::get<std::vector<double>>(j, "probs")};
  if (kind == "geometric") return GeometricPmf{detail::get<double>(j, "ratio")};
  if (kind == "power_law") return PowerLawPmf{detail::get<double>(j, "exponent")};
  throw ConfigError("unknown pmf descriptor '" + kind + "'");
}

inline ScaleDescriptor scale_descriptor_from_json(const json& j) {
  const auto kind = detail::get<std::string>(j, "kind");
  if (kind == "atomic")
    return AtomicScales{detail::get<std::vector<double>>(j, "sigmas"), detail::get<std::vector<double>>(j, "weights")};
  if (kind == "lognormal") return SigmaLogNormal{detail::get<double>(j, "log_mean"), detail::get<double>(j, "log_sd")};
  if (kind == "inverse_gamma") return SigmaInverseGamma{detail::get<double>(j, "shape"), detail::get<double>(j, "scale")};
  if (kind == "sigma2_inverse_gamma")
    return SigmaSquaredInverseGamma{detail::get<double>(j, "shape"), detail::get<double>(j, "scale")};
  if (kind == "gamma") return SigmaGamma{detail::get<double>(j, "shape"), detail::get<double>(j, "rate")};
  return UnsupportedScale{kind};
}

// ---------------------------------------------------------------------------
// Experiment configuration

inline NeighborhoodRadii radii_from_json(const json& j, NeighborhoodRadii r = {}) {
  r.d_l = detail::get_or(j, "d_l", r.d_l);
  r.transition = detail::get_or(j, "transition", r.transition);
  r.emission = detail::get_or(j, "emission", r.emission);
  r.smoothing = detail::get_or(j, "smoothing", r.smoothing);
  return r;
}

inline ExperimentConfig experiment_from_json(const json& config) {
  ExperimentConfig e;
  e.truth = params_from_json(detail::get<json>(config, "truth"));
  e.gibbs = gibbs_from_json(config);
  const auto& x = detail::get<json>(config, "experiment");
  e.n_grid = detail::get<std::vector<std::size_t>>(x, "n_grid");
  if (x.contains("epsilon")) e.epsilon = radii_from_json(x.at("epsilon"));
  e.replications = detail::get_or<std::size_t>(x, "replications", 5);
  e.l = detail::get_or<std::size_t>(x, "l", kDefaultBlockLength);
  e.smoothing_block = detail::get_or<std::size_t>(x, "smoothing_block", 1);
  e.smoothing_indices = detail::get_or(x, "smoothing_indices", std::vector<std::size_t>{});
  e.monte_carlo_samples = detail::get_or<std::size_t>(x, "monte_carlo_samples", 20'000);
  e.seed = detail::get_or<std::uint64_t>(x, "seed", 0);
  e.threads = detail::get_or<std::size_t>(x, "threads", 0);
  if (x.contains("track")) {
    e.track = {false, false, false, false};
    for (const auto& name : x.at("track")) {
      const auto s = name.get<std::string>();
      auto it = std::find(kTrackedNames.begin(), kTrackedNames.end(), s);
      if (it == kTrackedNames.end()) throw ConfigError("unknown tracked metric '" + s + "'");
      e.track[static_cast<std::size_t>(it - kTrackedNames.begin())] = true;
    }
  }
  e.validate();
  return e;
}

inline json to_json(const ExperimentReport& report) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    json masses = json::object();
    for (std::size_t m = 0; m < kTrackedCount; ++m)
      if (report.track[m]) masses[kTrackedNames[m]] = mass_below(c.values[m], report.epsilon[m]);
    json cell{{"n", c.n}, {"replication", c.replication}, {"seed", c.seed}, {"samples", c.samples()}, {"masses", masses}};
    if (!c.ok()) cell["error"] = c.error;
    cells.push_back(cell);
  }
  json verdicts = json::array();
  for (const auto& v : report.verdicts)
    verdicts.push_back({{"metric", v.metric}, {"masses", v.masses}, {"monotone", v.monotone}, {"final_ok", v.final_ok},
                        {"verdict", v.pass() ? "PASS" : "FAIL"}});
  return {{"n_grid", report.n_grid}, {"cells", cells}, {"verdicts", verdicts}, {"verdict", report.pass() ? "PASS" : "FAIL"}};
}

// ---------------------------------------------------------------------------
// Line-oriented files

inline std::string format_observation(Observation y) {
  if (std::floor(y) == y && std::abs(y) < 1e15) {
    std::ostringstream os;
    os << static_cast<long long>(y);
    return os.str();
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", y);
  return buf;
}

inline void write_observations(const std::filesystem::path& path, std::span<const Observation> y) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (Observation v : y) out << format_observation(v) << '\n';
}

inline void write_states(const std::filesystem::path& path, std::span<const std::size_t> x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t v : x) out << v << '\n';
}

/// One observation per line; blank lines are skipped.
inline std::vector<Observation> read_observations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open observation file " + path.string());
  std::vector<Observation> y;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      const double v = std::stod(line, &used);
      if (line.find_first_not_of(" \t\r", used) != std::string::npos || !std::isfinite(v)) throw std::invalid_argument("");
      y.push_back(v);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + line + "'");
    }
  }
  if (y.empty()) throw DataError("observation file " + path.string() + " is empty");
  return y;
}

inline json to_json(const PosteriorSample& s) {
  return {{"iter", s.iter}, {"chain", s.chain_id}, {"params", to_json(s.params)}, {"states", s.states}};
}

inline PosteriorSample sample_from_json(const json& j) {
  PosteriorSample s;
  s.iter = detail::get<std::size_t>(j, "iter");
  s.chain_id = detail::get<std::size_t>(j, "chain");
  s.params = params_from_json(detail::get<json>(j, "params"));
  s.states = detail::get_or(j, "states", std::vector<std::size_t>{});
  return s;
}

inline std::vector<PosteriorSample> read_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sample file " + path.string());
  std::vector<PosteriorSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct MetricRecord {
  std::string sample_id;
  std::string metric;
  std::size_t l = 0;
  std::string mode;
  double value = 0.0;
  double std_error = 0.0;
};

inline json to_json(const MetricRecord& r) {
  // JSON has no infinity; an infinite value is written as the string "inf".
  json value = std::isfinite(r.value) ? json(r.value) : json(r.value > 0 ? "inf" : "-inf");
  return {{"sample", r.sample_id}, {"metric", r.metric}, {"l", r.l}, {"mode", r.mode}, {"value", value}, {"stderr", r.std_error}};
}

inline json load_json(const std::filesystem::path& path) {
  const auto text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace nphmm::io
