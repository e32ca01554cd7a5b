#pragma once

// Files and configuration: data/adjacency CSV, chain directories,
// per-draw transforms, INI run configuration with key overrides.
// Numbers are written in shortest round-trip form so that re-reading a file
// gives back the same doubles and re-runs give identical bytes.

#include <Eigen/Dense>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "nlmf/alignment.hpp"
#include "nlmf/errors.hpp"
#include "nlmf/gibbs.hpp"
#include "nlmf/measures.hpp"
#include "nlmf/pipeline.hpp"
#include "nlmf/slopt.hpp"
#include "nlmf/synthetic.hpp"

namespace nlmf {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline std::string fmt(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InputError(what + ": not a number: '" + std::string(s) + "'");
  return v;
}

inline long parse_long(std::string_view s, const std::string& what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InputError(what + ": not an integer: '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto p = line.find(',', start);
    out.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + p.string());
  return in;
}

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  return out;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

// ---------------------------------------------------------------------------
// Data and adjacency

/// CSV with header `group,value`; groups keep their order of first appearance.
inline GroupedData read_data_csv(std::istream& in, const std::string& name = "data") {
  GroupedData d;
  std::map<std::string, std::size_t> index;
  std::string line;
  long lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (f.size() != 2) throw InputError(where + ": expected 2 fields (group,value)");
    if (header) {
      header = false;
      if (f[0] == "group") continue;
    }
    const std::string key(f[0]);
    auto [it, inserted] = index.try_emplace(key, d.y.size());
    if (inserted) {
      d.y.emplace_back();
      d.labels.push_back(key);
    }
    d.y[it->second].push_back(parse_double(f[1], where));
  }
  d.validate();
  return d;
}

inline GroupedData read_data_csv(const fs::path& p) {
  auto in = open_in(p);
  return read_data_csv(in, p.string());
}

inline void write_data_csv(std::ostream& os, const GroupedData& d) {
  os << "group,value\n";
  for (std::size_t j = 0; j < d.y.size(); ++j)
    for (double v : d.y[j]) os << d.labels[j] << ',' << fmt(v) << '\n';
}

/// Edge list `i,j` with 0-based group indices.
inline std::vector<Edge> read_edges_csv(const fs::path& p) {
  auto in = open_in(p);
  std::vector<Edge> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = p.string() + ":" + std::to_string(lineno);
    if (f.size() != 2) throw InputError(where + ": expected 2 fields (i,j)");
    if (lineno == 1 && f[0] == "i") continue;
    out.emplace_back(static_cast<int>(parse_long(f[0], where)), static_cast<int>(parse_long(f[1], where)));
  }
  return out;
}

inline void write_edges_csv(std::ostream& os, const std::vector<Edge>& edges) {
  os << "i,j\n";
  for (const auto& [i, j] : edges) os << i << ',' << j << '\n';
}

inline json truth_to_json(const TrueMixture& t) {
  json j;
  j["components"] = json::array();
  for (const auto& a : t.components) j["components"].push_back({{"mu", a.mu}, {"sigma2", a.sigma2}});
  j["weights"] = json::array();
  for (Eigen::Index r = 0; r < t.weights.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < t.weights.cols(); ++c) row.push_back(t.weights(r, c));
    j["weights"].push_back(row);
  }
  return j;
}

inline TrueMixture truth_from_json(const json& j) {
  TrueMixture t;
  try {
    for (const auto& c : j.at("components")) t.components.push_back({c.at("mu").get<double>(), c.at("sigma2").get<double>()});
    const auto& w = j.at("weights");
    t.weights.resize(static_cast<Eigen::Index>(w.size()), static_cast<Eigen::Index>(t.components.size()));
    for (std::size_t r = 0; r < w.size(); ++r) {
      if (w[r].size() != t.components.size()) throw InputError("truth: weight row has the wrong length");
      for (std::size_t c = 0; c < w[r].size(); ++c) t.weights(r, c) = w[r][c].get<double>();
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("truth: malformed json: ") + e.what());
  }
  return t;
}

inline json read_json(const fs::path& p) {
  auto in = open_in(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

}  // namespace nlmf

inline void nlmf::DensityGrid::write_csv(std::ostream& os) const {
  validate();
  os << "y";
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    os << ',' << (static_cast<std::size_t>(r) < names.size() ? names[r] : "f" + std::to_string(r + 1));
  os << '\n';
  for (Eigen::Index i = 0; i < points.size(); ++i) {
    os << fmt(points[i]);
    for (Eigen::Index r = 0; r < values.rows(); ++r) os << ',' << fmt(values(r, i));
    os << '\n';
  }
}

namespace nlmf {

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  bool mu0_from_data = true;
  SamplerConfig sampler;
  PostprocessConfig post;
  long grid_n = 500;
  std::optional<double> grid_lo, grid_hi;
  AlignMetric metric = AlignMetric::L2;
  int clusters = 4;

  void validate() const {
    sampler.validate();
    post.alm.validate();
    if (threads < 1) throw InputError("config: run.threads must be >= 1");
    if (grid_n < 2) throw InputError("config: grid.n must be >= 2");
    if (grid_lo.has_value() != grid_hi.has_value()) throw InputError("config: set both grid.lo and grid.hi or neither");
    if (grid_lo && !(*grid_hi > *grid_lo)) throw InputError("config: grid.hi must exceed grid.lo");
    if (clusters < 1) throw InputError("config: summary.clusters must be >= 1");
  }

  VectorXd grid(std::span<const double> data) const {
    if (grid_lo) return equispaced(*grid_lo, *grid_hi, grid_n);
    return default_grid(data, grid_n);
  }
};

namespace detail {

struct ConfigKey {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InputError("config: " + key + " must be true or false");
}

inline const std::map<std::string, ConfigKey>& config_keys() {
  static const std::map<std::string, ConfigKey> keys = [] {
    std::map<std::string, ConfigKey> k;
    auto dbl = [&](const std::string& name, auto field) {
      k[name] = {[name, field](RunConfig& c, const std::string& v) { field(c) = parse_double(v, name); },
                 [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }};
    };
    auto lng = [&](const std::string& name, auto field) {
      k[name] = {[name, field](RunConfig& c, const std::string& v) {
                   field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_long(v, name));
                 },
                 [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
    };
    auto boo = [&](const std::string& name, auto field) {
      k[name] = {[name, field](RunConfig& c, const std::string& v) { field(c) = parse_bool(v, name); },
                 [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
    };
    lng("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
    lng("run.threads", [](RunConfig& c) -> int& { return c.threads; });

    lng("model.K", [](RunConfig& c) -> int& { return c.sampler.K; });
    dbl("model.phi", [](RunConfig& c) -> double& { return c.sampler.phi; });
    lng("model.H", [](RunConfig& c) -> int& { return c.sampler.H; });
    k["model.prior"] = {[](RunConfig& c, const std::string& v) {
                          if (v == "mgp") c.sampler.prior = LoadingsPrior::Mgp;
                          else if (v == "car") c.sampler.prior = LoadingsPrior::Car;
                          else throw InputError("config: model.prior must be mgp or car");
                        },
                        [](const RunConfig& c) { return std::string(c.sampler.prior == LoadingsPrior::Mgp ? "mgp" : "car"); }};
    k["model.mu0"] = {[](RunConfig& c, const std::string& v) {
                        if (v == "data") {
                          c.mu0_from_data = true;
                        } else {
                          c.sampler.base.mu0 = parse_double(v, "model.mu0");
                          c.mu0_from_data = false;
                        }
                      },
                      [](const RunConfig& c) { return c.mu0_from_data ? std::string("data") : fmt(c.sampler.base.mu0); }};
    dbl("model.lambda0", [](RunConfig& c) -> double& { return c.sampler.base.lambda0; });
    dbl("model.a", [](RunConfig& c) -> double& { return c.sampler.base.a; });
    dbl("model.b", [](RunConfig& c) -> double& { return c.sampler.base.b; });
    dbl("model.likelihood_weight", [](RunConfig& c) -> double& { return c.sampler.likelihood_weight; });

    dbl("mgp.a1", [](RunConfig& c) -> double& { return c.sampler.mgp.a1; });
    dbl("mgp.a2", [](RunConfig& c) -> double& { return c.sampler.mgp.a2; });
    dbl("mgp.nu", [](RunConfig& c) -> double& { return c.sampler.mgp.nu; });
    dbl("car.rho", [](RunConfig& c) -> double& { return c.sampler.car_rho; });
    dbl("car.tau", [](RunConfig& c) -> double& { return c.sampler.car_tau; });

    lng("mcmc.iterations", [](RunConfig& c) -> long& { return c.sampler.iterations; });
    lng("mcmc.burn_in", [](RunConfig& c) -> long& { return c.sampler.burn_in; });
    lng("mcmc.thin", [](RunConfig& c) -> long& { return c.sampler.thin; });
    boo("mcmc.adapt_H", [](RunConfig& c) -> bool& { return c.sampler.adapt_H; });
    lng("mcmc.adapt_window", [](RunConfig& c) -> long& { return c.sampler.adapt_window; });
    lng("mcmc.adapt_every", [](RunConfig& c) -> long& { return c.sampler.adapt_every; });
    dbl("mcmc.adapt_eps", [](RunConfig& c) -> double& { return c.sampler.adapt_eps; });
    lng("mcmc.leapfrog", [](RunConfig& c) -> int& { return c.sampler.leapfrog; });
    dbl("mcmc.hmc_step0", [](RunConfig& c) -> double& { return c.sampler.hmc_step0; });
    dbl("mcmc.hmc_target", [](RunConfig& c) -> double& { return c.sampler.hmc_target; });
    dbl("mcmc.jump_step0", [](RunConfig& c) -> double& { return c.sampler.jump_step0; });
    dbl("mcmc.jump_target", [](RunConfig& c) -> double& { return c.sampler.jump_target; });

    dbl("postprocess.rho", [](RunConfig& c) -> double& { return c.post.alm.rho; });
    dbl("postprocess.gamma", [](RunConfig& c) -> double& { return c.post.alm.gamma; });
    dbl("postprocess.eps_star", [](RunConfig& c) -> double& { return c.post.alm.eps_star; });
    dbl("postprocess.eps", [](RunConfig& c) -> double& { return c.post.alm.eps; });
    dbl("postprocess.rho_factor", [](RunConfig& c) -> double& { return c.post.alm.rho_factor; });
    lng("postprocess.max_outer", [](RunConfig& c) -> int& { return c.post.alm.max_outer; });
    dbl("postprocess.feasibility_tol", [](RunConfig& c) -> double& { return c.post.alm.feasibility_tol; });
    boo("postprocess.warm_start", [](RunConfig& c) -> bool& { return c.post.alm.warm_start; });
    boo("postprocess.normalize_loss", [](RunConfig& c) -> bool& { return c.post.alm.normalize_loss; });
    k["postprocess.penalty"] = {[](RunConfig& c, const std::string& v) {
                                  if (v == "hinge") c.post.alm.penalty = PenaltyForm::Hinge;
                                  else if (v == "printed") c.post.alm.penalty = PenaltyForm::Printed;
                                  else throw InputError("config: postprocess.penalty must be hinge or printed");
                                },
                                [](const RunConfig& c) {
                                  return std::string(c.post.alm.penalty == PenaltyForm::Hinge ? "hinge" : "printed");
                                }};
    dbl("postprocess.step", [](RunConfig& c) -> double& { return c.post.alm.rattle.step; });
    dbl("postprocess.momentum", [](RunConfig& c) -> double& { return c.post.alm.rattle.momentum; });
    lng("postprocess.max_iters", [](RunConfig& c) -> long& { return c.post.alm.rattle.max_iters; });
    boo("postprocess.safeguard", [](RunConfig& c) -> bool& { return c.post.alm.rattle.safeguard; });
    dbl("postprocess.det_tol", [](RunConfig& c) -> double& { return c.post.alm.rattle.det_tol; });
    k["postprocess.projection"] = {[](RunConfig& c, const std::string& v) {
                                     if (v == "generator") c.post.alm.rattle.projection = SlProjection::GeneratorSum;
                                     else if (v == "orthogonal") c.post.alm.rattle.projection = SlProjection::Orthogonal;
                                     else throw InputError("config: postprocess.projection must be generator or orthogonal");
                                   },
                                   [](const RunConfig& c) {
                                     return std::string(c.post.alm.rattle.projection == SlProjection::GeneratorSum
                                                            ? "generator"
                                                            : "orthogonal");
                                   }};
    lng("postprocess.chunk", [](RunConfig& c) -> long& { return c.post.chunk; });
    boo("postprocess.warm_from_previous", [](RunConfig& c) -> bool& { return c.post.warm_from_previous; });

    lng("grid.n", [](RunConfig& c) -> long& { return c.grid_n; });
    k["grid.lo"] = {[](RunConfig& c, const std::string& v) { c.grid_lo = parse_double(v, "grid.lo"); },
                    [](const RunConfig& c) { return c.grid_lo ? fmt(*c.grid_lo) : std::string("auto"); }};
    k["grid.hi"] = {[](RunConfig& c, const std::string& v) { c.grid_hi = parse_double(v, "grid.hi"); },
                    [](const RunConfig& c) { return c.grid_hi ? fmt(*c.grid_hi) : std::string("auto"); }};
    k["summary.metric"] = {[](RunConfig& c, const std::string& v) {
                             if (v == "l2") c.metric = AlignMetric::L2;
                             else if (v == "lsw") c.metric = AlignMetric::LSW;
                             else throw InputError("config: summary.metric must be l2 or lsw");
                           },
                           [](const RunConfig& c) { return std::string(c.metric == AlignMetric::L2 ? "l2" : "lsw"); }};
    lng("summary.clusters", [](RunConfig& c) -> int& { return c.clusters; });
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Applies `section.key=value`.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InputError("override '" + assignment + "' is not of the form section.key=value");
  const std::string key = assignment.substr(0, eq), value = assignment.substr(eq + 1);
  const auto& keys = detail::config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw InputError("unknown config key '" + key + "'");
  it->second.set(c, value);
}

/// Applies every key of an INI file on top of `c`.
inline void apply_config(RunConfig& c, std::istream& in, const std::string& name = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InputError(name + ": " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw InputError(name + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) apply_override(c, section + "." + key + "=" + value.get_value<std::string>());
  }
}

inline RunConfig read_config(std::istream& in, const std::string& name = "config") {
  RunConfig c;
  apply_config(c, in, name);
  return c;
}

inline RunConfig read_config(const fs::path& p) {
  auto in = open_in(p);
  return read_config(in, p.string());
}

/// Every key with its resolved value, grouped by section.
inline json config_to_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& [name, key] : detail::config_keys()) {
    const auto dot = name.find('.');
    j[name.substr(0, dot)][name.substr(dot + 1)] = key.get(c);
  }
  return j;
}

inline void write_config_ini(std::ostream& os, const RunConfig& c) {
  std::string section;
  for (const auto& [name, key] : detail::config_keys()) {
    const auto dot = name.find('.');
    if (name.substr(0, dot) != section) {
      if (!section.empty()) os << '\n';
      section = name.substr(0, dot);
      os << '[' << section << "]\n";
    }
    const std::string v = key.get(c);
    if (v != "auto") os << name.substr(dot + 1) << " = " << v << '\n';
  }
}

// ---------------------------------------------------------------------------
// Chain directory: meta.json, draws.csv, logjoint.csv

inline void write_draws_csv(std::ostream& os, const ChainRecord& chain) {
  os << "# iteration,log_joint,H,K,g,mu[K],sigma2[K],J[K],M[HxK row-major],Lambda[gxH row-major]\n";
  for (const auto& d : chain.draws) {
    const auto K = d.J.size(), H = d.M.rows(), g = d.Lambda.rows();
    os << d.iteration << ',' << fmt(d.log_joint) << ',' << H << ',' << K << ',' << g;
    for (const auto& a : d.atoms) os << ',' << fmt(a.mu);
    for (const auto& a : d.atoms) os << ',' << fmt(a.sigma2);
    for (Eigen::Index k = 0; k < K; ++k) os << ',' << fmt(d.J[k]);
    for (Eigen::Index h = 0; h < H; ++h)
      for (Eigen::Index k = 0; k < K; ++k) os << ',' << fmt(d.M(h, k));
    for (Eigen::Index j = 0; j < g; ++j)
      for (Eigen::Index h = 0; h < H; ++h) os << ',' << fmt(d.Lambda(j, h));
    os << '\n';
  }
}

inline std::vector<ChainDraw> read_draws_csv(std::istream& in, const std::string& name) {
  std::vector<ChainDraw> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (f.size() < 5) throw InputError(where + ": truncated draw");
    ChainDraw d;
    d.iteration = parse_long(f[0], where);
    d.log_joint = parse_double(f[1], where);
    const long H = parse_long(f[2], where), K = parse_long(f[3], where), g = parse_long(f[4], where);
    if (H < 1 || K < 1 || g < 1) throw InputError(where + ": bad dimensions");
    if (f.size() != static_cast<std::size_t>(5 + 3 * K + H * K + g * H)) throw InputError(where + ": wrong field count");
    std::size_t p = 5;
    auto next = [&] { return parse_double(f[p++], where); };
    d.atoms.resize(K);
    for (auto& a : d.atoms) a.mu = next();
    for (auto& a : d.atoms) a.sigma2 = next();
    d.J.resize(K);
    for (long k = 0; k < K; ++k) d.J[k] = next();
    d.M.resize(H, K);
    for (long h = 0; h < H; ++h)
      for (long k = 0; k < K; ++k) d.M(h, k) = next();
    d.Lambda.resize(g, H);
    for (long j = 0; j < g; ++j)
      for (long h = 0; h < H; ++h) d.Lambda(j, h) = next();
    out.push_back(std::move(d));
  }
  return out;
}

inline json stats_to_json(const ChainStats& s) {
  return {{"jump_accept", s.jump_accept},
          {"scores_accept", s.scores_accept},
          {"loadings_accept", s.loadings_accept},
          {"scores_step", s.scores_step},
          {"loadings_step", s.loadings_step},
          {"small_energy_error_frac", s.small_energy_error_frac},
          {"divergences", s.divergences},
          {"H_trace", s.H_trace}};
}

inline void write_chain_dir(const fs::path& dir, const ChainRecord& chain, const RunConfig& cfg, const json& extra = {}) {
  fs::create_directories(dir);
  json meta;
  meta["config"] = config_to_json(cfg);
  meta["mu0"] = cfg.sampler.base.mu0;
  meta["K"] = chain.K;
  meta["g"] = chain.g;
  meta["H"] = chain.H();
  meta["draws"] = chain.draws.size();
  meta["stats"] = stats_to_json(chain.stats);
  if (!extra.is_null())
    for (const auto& [k, v] : extra.items()) meta[k] = v;
  write_json(dir / "meta.json", meta);
  {
    auto out = open_out(dir / "draws.csv");
    write_draws_csv(out, chain);
  }
  auto out = open_out(dir / "logjoint.csv");
  out << "iteration,log_joint\n";
  for (const auto& d : chain.draws) out << d.iteration << ',' << fmt(d.log_joint) << '\n';
}

inline ChainRecord read_chain_dir(const fs::path& dir) {
  if (!fs::exists(dir / "draws.csv")) throw InputError("no chain found in " + dir.string() + " (run fit first)");
  ChainRecord c;
  auto in = open_in(dir / "draws.csv");
  c.draws = read_draws_csv(in, (dir / "draws.csv").string());
  if (c.draws.empty()) throw InputError(dir.string() + ": chain has no draws");
  c.K = static_cast<int>(c.draws.front().J.size());
  c.g = c.draws.front().Lambda.rows();
  return c;
}

// ---------------------------------------------------------------------------
// transforms.csv

inline AlmStatus status_from_string(std::string_view s) {
  if (s == "converged") return AlmStatus::Converged;
  if (s == "restarted") return AlmStatus::Restarted;
  if (s == "failed") return AlmStatus::Failed;
  throw InputError("unknown transform status '" + std::string(s) + "'");
}

inline void write_transforms_csv(std::ostream& os, const std::vector<TransformResult>& t) {
  os << "# draw,status,loss,loss_identity,max_violation,outer,inner,max_det_dev,H,Q[HxH row-major],perm[H or empty]\n";
  for (std::size_t l = 0; l < t.size(); ++l) {
    const auto& r = t[l];
    const auto H = r.Q.rows();
    os << l << ',' << to_string(r.status) << ',' << fmt(r.loss) << ',' << fmt(r.loss_identity) << ','
       << fmt(r.max_violation) << ',' << r.outer_iterations << ',' << r.inner_iterations << ',' << fmt(r.max_det_dev)
       << ',' << H;
    for (Eigen::Index i = 0; i < H; ++i)
      for (Eigen::Index k = 0; k < H; ++k) os << ',' << fmt(r.Q(i, k));
    for (int p : r.perm) os << ',' << p;
    os << '\n';
  }
}

inline std::vector<TransformResult> read_transforms_csv(const fs::path& p) {
  auto in = open_in(p);
  std::vector<TransformResult> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv(line);
    const std::string where = p.string() + ":" + std::to_string(lineno);
    if (f.size() < 9) throw InputError(where + ": truncated transform");
    TransformResult r;
    if (parse_long(f[0], where) != static_cast<long>(out.size())) throw InputError(where + ": draws out of order");
    r.status = status_from_string(f[1]);
    r.loss = parse_double(f[2], where);
    r.loss_identity = parse_double(f[3], where);
    r.max_violation = parse_double(f[4], where);
    r.outer_iterations = static_cast<int>(parse_long(f[5], where));
    r.inner_iterations = parse_long(f[6], where);
    r.max_det_dev = parse_double(f[7], where);
    const long H = parse_long(f[8], where);
    const std::size_t base = 9 + static_cast<std::size_t>(H * H);
    if (H < 1 || (f.size() != base && f.size() != base + static_cast<std::size_t>(H)))
      throw InputError(where + ": wrong field count");
    r.Q.resize(H, H);
    for (long i = 0; i < H; ++i)
      for (long k = 0; k < H; ++k) r.Q(i, k) = parse_double(f[9 + i * H + k], where);
    for (std::size_t q = base; q < f.size(); ++q) r.perm.push_back(static_cast<int>(parse_long(f[q], where)));
    if (!r.perm.empty() && !is_permutation(r.perm)) throw InputError(where + ": invalid permutation");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace nlmf
