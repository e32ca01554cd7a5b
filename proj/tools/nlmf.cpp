// nlmf command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <numeric>

#include "nlmf/analytics.hpp"
#include "nlmf/io.hpp"
#include "nlmf/pipeline.hpp"
#include "nlmf/summaries.hpp"
#include "nlmf/synthetic.hpp"

using namespace nlmf;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int threads = 0;  // 0: take run.threads from the config
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override, section.key=value (repeatable)");
  sub->add_option("--threads", c.threads, "cap on worker threads")->check(CLI::PositiveNumber);
}

RunConfig resolve(const Common& c, const std::optional<RunConfig>& base = std::nullopt) {
  RunConfig cfg = base ? *base : RunConfig{};
  if (!c.config.empty()) {
    auto in = open_in(c.config);
    apply_config(cfg, in, c.config);
  }
  for (const auto& s : c.sets) apply_override(cfg, s);
  if (c.threads > 0) cfg.threads = c.threads;
  cfg.post.threads = cfg.threads;
  cfg.validate();
  return cfg;
}

/// The configuration a chain was fitted with, from its meta.json.
RunConfig chain_config(const fs::path& dir) {
  const fs::path meta = dir / "meta.json";
  if (!fs::exists(meta)) throw InputError("no meta.json in " + dir.string() + " (run fit first)");
  const json j = read_json(meta);
  RunConfig cfg;
  for (const auto& [sec, body] : j.at("config").items())
    for (const auto& [k, v] : body.items())
      if (v.get<std::string>() != "auto") apply_override(cfg, sec + "." + k + "=" + v.get<std::string>());
  if (cfg.mu0_from_data) cfg.sampler.base.mu0 = j.at("mu0").get<double>();
  return cfg;
}

std::vector<double> flatten(const GroupedData& d) {
  std::vector<double> all;
  for (const auto& g : d.y) all.insert(all.end(), g.begin(), g.end());
  return all;
}

void write_text(const fs::path& p, const std::string& s) {
  auto out = open_out(p);
  out << s;
}

json matrix_json(const MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(row);
  }
  return a;
}

json vector_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string scenario = "dirichlet";
  int g = 100, n = 25, q = 4;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  Rng rng(a.seed);
  SyntheticData s;
  if (a.scenario == "dirichlet") s = generate_dirichlet_mix(a.g, a.n, rng);
  else if (a.scenario == "lattice") s = generate_spatial_lattice(a.q, a.n, rng);
  else throw InputError("--scenario must be dirichlet or lattice");
  const fs::path dir(a.out);
  {
    auto out = open_out(dir / "data.csv");
    write_data_csv(out, s.data);
  }
  if (!s.edges.empty()) {
    auto out = open_out(dir / "edges.csv");
    write_edges_csv(out, s.edges);
  }
  json truth = truth_to_json(s.truth);
  truth["scenario"] = a.scenario;
  truth["seed"] = a.seed;
  write_json(dir / "truth.json", truth);
  std::cout << "wrote " << s.data.g() << " groups to " << dir.string() << "\n";
  return 0;
}

struct FitArgs {
  Common common;
  std::string data, adjacency, out;
  double jitter = 0.0;
};

int cmd_fit(const FitArgs& a) {
  RunConfig cfg = resolve(a.common);
  GroupedData data = read_data_csv(a.data);
  if (a.jitter > 0.0) {
    Rng r = Rng(cfg.seed).substream(0x6a);
    for (auto& g : data.y)
      for (auto& v : g) v += a.jitter * r.normal();
  }
  if (cfg.mu0_from_data) {
    const auto all = flatten(data);
    cfg.sampler.base.mu0 = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
  }
  std::optional<MatrixXd> W;
  if (cfg.sampler.prior == LoadingsPrior::Car) {
    if (a.adjacency.empty()) throw InputError("model.prior = car needs --adjacency");
    W = adjacency_from_edges(static_cast<int>(data.g()), read_edges_csv(a.adjacency));
  } else if (!a.adjacency.empty()) {
    log::warn("--adjacency ignored under the mgp prior");
  }
  const ChainRecord chain = run_chain(data, cfg.sampler, cfg.seed, W);
  const fs::path dir(a.out);
  json extra;
  extra["data"] = a.data;
  if (!a.adjacency.empty()) extra["adjacency"] = a.adjacency;
  extra["jitter"] = a.jitter;
  write_chain_dir(dir, chain, cfg, extra);
  {
    auto out = open_out(dir / "data.csv");
    write_data_csv(out, data);
  }
  std::cout << "chain: " << chain.draws.size() << " draws, H = " << chain.H() << ", written to " << dir.string()
            << "\n";
  return 0;
}

struct ChainArgs {
  Common common;
  std::string chain;
};

int cmd_postprocess(const ChainArgs& a) {
  const fs::path dir(a.chain);
  const RunConfig cfg = resolve(a.common, chain_config(dir));
  const ChainRecord chain = read_chain_dir(dir);
  const auto t = postprocess_chain(chain, cfg.post);
  {
    auto out = open_out(dir / "transforms.csv");
    write_transforms_csv(out, t);
  }
  long ok = 0;
  double worst_det = 0.0;
  for (const auto& r : t) {
    ok += r.success() && r.max_violation <= cfg.post.alm.feasibility_tol && r.loss <= r.loss_identity;
    worst_det = std::max(worst_det, r.max_det_dev);
  }
  json j;
  j["config"] = config_to_json(cfg);
  j["draws"] = t.size();
  j["feasible_improved"] = ok;
  j["max_det_dev"] = worst_det;
  write_json(dir / "postprocess.json", j);
  std::cout << ok << "/" << t.size() << " draws feasible and improved; max |det Q - 1| = " << worst_det << "\n";
  return 0;
}

std::vector<TransformResult> load_transforms(const fs::path& dir, const ChainRecord& chain) {
  if (!fs::exists(dir / "transforms.csv"))
    throw InputError("no transforms.csv in " + dir.string() + ": run postprocess on this chain first");
  auto t = read_transforms_csv(dir / "transforms.csv");
  if (t.size() != chain.draws.size()) throw InputError("transforms.csv does not match the chain (draw count differs)");
  return t;
}

int cmd_align(const ChainArgs& a) {
  const fs::path dir(a.chain);
  const RunConfig cfg = resolve(a.common, chain_config(dir));
  const ChainRecord chain = read_chain_dir(dir);
  auto t = load_transforms(dir, chain);
  const std::size_t tmpl = align_chain(chain, t, cfg.metric);
  {
    auto out = open_out(dir / "transforms.csv");
    write_transforms_csv(out, t);
  }
  json j;
  j["template"] = tmpl;
  j["metric"] = cfg.metric == AlignMetric::L2 ? "l2" : "lsw";
  write_json(dir / "align.json", j);
  std::cout << "aligned " << t.size() << " draws to template draw " << tmpl << "\n";
  return 0;
}

struct SummarizeArgs {
  ChainArgs chain;
  std::string truth;
};

int cmd_summarize(const SummarizeArgs& a) {
  const fs::path dir(a.chain.chain);
  const RunConfig cfg = resolve(a.chain.common, chain_config(dir));
  const ChainRecord chain = read_chain_dir(dir);
  const auto t = load_transforms(dir, chain);
  for (const auto& r : t)
    if (r.perm.empty()) throw InputError("transforms.csv has no permutations: run align on this chain first");
  const GroupedData data = read_data_csv(dir / "data.csv");
  const auto all = flatten(data);
  const VectorXd grid = cfg.grid(all);

  const PosteriorSummary s = aligned_means(chain, t, grid);
  const Clustering cl = cluster_loadings(s.lambda_prime, std::min<int>(cfg.clusters, static_cast<int>(s.g())));
  json j;
  j["draws"] = s.draws;
  j["H"] = s.H();
  j["g"] = s.g();
  j["masses"] = vector_json(s.masses);
  j["importance"] = vector_json(s.importance);
  j["lambda_prime"] = matrix_json(s.lambda_prime);
  j["scores"] = matrix_json(s.s);
  j["clusters"] = {{"labels", cl.labels}, {"centers", matrix_json(cl.centers)}, {"heights", cl.heights}};

  // one file: normalized factors, residual factors, posterior mean group densities
  const DensityGrid res = residual_densities(s);
  const MatrixXd groups = posterior_group_densities(chain, grid);
  DensityGrid dens{grid, MatrixXd(2 * s.H() + groups.rows(), grid.size()), {}};
  dens.values << factor_densities(s), res.values, groups;
  for (Eigen::Index h = 0; h < s.H(); ++h) dens.names.push_back("factor_" + std::to_string(h + 1));
  dens.names.insert(dens.names.end(), res.names.begin(), res.names.end());
  for (const auto& label : data.labels) dens.names.push_back("group_" + label);
  {
    auto out = open_out(dir / "densities.csv");
    dens.write_csv(out);
  }
  const double w = waic(chain, data);
  write_text(dir / "waic.txt", fmt(w) + "\n");
  j["waic"] = w;

  if (!a.truth.empty()) {
    const TrueMixture truth = truth_from_json(read_json(a.truth));
    if (truth.weights.rows() != data.g()) throw InputError("truth has a different number of groups than the data");
    double kl = 0.0;
    bool clamped = false;
    for (Eigen::Index g = 0; g < data.g(); ++g) {
      const auto r = kl_to_truth(groups.row(g).transpose(), truth.density(g, grid), grid);
      kl += r.value;
      clamped |= r.clamped;
    }
    j["kl_mean"] = kl / static_cast<double>(data.g());
    j["kl_clamped"] = clamped;
  }
  write_json(dir / "summary.json", j);
  std::cout << "summary written to " << dir.string() << " (H = " << s.H() << ", WAIC = " << w << ")\n";
  return 0;
}

struct PriorArgs {
  std::string experiment = "all";
  long draws = 1000000;
  std::uint64_t seed = 1;
  int threads = 1;
  int K = 2000;
  std::string out;
};

void emit_row(std::ostream& os, const std::string& name, const std::string& params, double formula,
              const McEstimate& mc) {
  os << name << ',' << params << ',' << fmt(formula) << ',' << fmt(mc.mean) << ',' << fmt(mc.se) << ','
     << fmt(z_score(formula, mc)) << '\n';
}

int cmd_prior(const PriorArgs& a) {
  const bool all = a.experiment == "all";
  const std::vector<std::string> known{"all", "moments", "corr-iid", "mgp-cov", "expectation", "jump-ratio"};
  if (std::find(known.begin(), known.end(), a.experiment) == known.end())
    throw InputError("unknown experiment '" + a.experiment + "'");
  const Rng rng(a.seed);
  const fs::path dir(a.out);
  const double alpha = 0.5, phi = 1.0;
  const std::string header = "quantity,params,formula,mc_mean,mc_se,z\n";

  if (all || a.experiment == "moments") {
    auto os = open_out(dir / "moments.csv");
    os << header;
    const auto c = corm_moments(phi, alpha);
    const auto chk = mixed_moment_check(phi, alpha, a.K, a.draws, rng.substream(1), a.threads);
    emit_row(os, "mixed_moment", "phi=1;alpha=0.5;K=" + std::to_string(a.K), c.mixed, chk.mc);
  }
  if (all || a.experiment == "corr-iid") {
    auto os = open_out(dir / "corr_iid.csv");
    os << header;
    PriorSpec s;
    s.H = 4;
    s.K = a.K;
    s.psi = 1.0;
    const auto tm = truncated_corm_moments(phi, s.K, alpha);
    const auto mc = mc_correlation(s, alpha, a.draws, rng.substream(2), a.threads);
    emit_row(os, "corr_printed", "H=4;psi=1", corr_iid_scores(4, 1.0, tm.mean, tm.var(), tm.cov()), mc);
    emit_row(os, "corr_derived", "H=4;psi=1", corr_iid_scores_derived(4, 1.0, tm.second, tm.var(), tm.cov()), mc);
  }
  if (all || a.experiment == "mgp-cov") {
    auto os = open_out(dir / "mgp_cov.csv");
    os << header;
    PriorSpec s;
    s.kind = LoadingsKind::Mgp;
    s.H = 4;
    s.K = a.K;
    s.mgp = MgpParams{2.5, 3.0, 6.0};
    const auto tm = truncated_corm_moments(phi, s.K, alpha);
    const auto mc = mgp_correlation_mc(s, alpha, a.draws, rng.substream(3), a.threads);
    emit_row(os, "corr_printed", "a1=2.5;a2=3;nu=6;H=4",
             mgp_cov_terms(2.5, 3.0, 6.0, 4, tm.second, tm.cross, tm.mean).corr(), mc);
    emit_row(os, "corr_derived", "a1=2.5;a2=3;nu=6;H=4",
             mgp_cov_terms_derived(2.5, 3.0, 6.0, 4, tm.second, tm.cross, tm.mean).corr(), mc);
  }
  if (all || a.experiment == "expectation") {
    auto os = open_out(dir / "expectation.csv");
    os << header;
    PriorSpec s;
    s.K = 20;
    for (double al : {0.25, 0.5, 0.75}) {
      const auto mc = expectation_mc(s, al, a.draws, rng.substream(4), a.threads);
      emit_row(os, "E_p(A)", "alpha=" + fmt(al), al, mc);
    }
  }
  if (all || a.experiment == "jump-ratio") {
    auto os = open_out(dir / "jump_ratio.csv");
    os << "loadings,H,mean,mean_se,variance,variance_se,var_lo,var_hi\n";
    PriorSpec iid;
    PriorSpec mgp;
    mgp.kind = LoadingsKind::Mgp;
    const std::vector<int> Hs{1, 2, 4, 8, 16, 32};
    const long n = std::min(a.draws, 200000L);
    for (const auto& [name, spec] : {std::pair{"iid", iid}, std::pair{"mgp", mgp}})
      for (const auto& r : jump_ratio_study(spec, Hs, n, rng.substream(5)))
        os << name << ',' << r.H << ',' << fmt(r.mean.mean) << ',' << fmt(r.mean.se) << ',' << fmt(r.variance) << ','
           << fmt(r.variance_se) << ',' << fmt(r.lo) << ',' << fmt(r.hi) << '\n';
  }
  std::cout << "tables written to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalized latent measure factor models"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "generate a synthetic grouped data set");
  s->add_option("--scenario", sim.scenario, "dirichlet or lattice");
  s->add_option("--groups", sim.g, "number of groups (dirichlet)")->check(CLI::PositiveNumber);
  s->add_option("--n", sim.n, "observations per group")->check(CLI::PositiveNumber);
  s->add_option("--q", sim.q, "lattice side minus one (lattice)")->check(CLI::PositiveNumber);
  s->add_option("--seed", sim.seed, "random seed");
  s->add_option("--out", sim.out, "output directory")->required();

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "run the Gibbs sampler and write a chain directory");
  add_common(f, fit.common);
  f->add_option("--data", fit.data, "CSV with columns group,value")->required()->check(CLI::ExistingFile);
  f->add_option("--adjacency", fit.adjacency, "CSV edge list i,j (CAR prior)")->check(CLI::ExistingFile);
  f->add_option("--jitter", fit.jitter, "add N(0, sd^2) noise to every observation")->check(CLI::NonNegativeNumber);
  f->add_option("--out", fit.out, "chain directory")->required();

  ChainArgs post;
  auto* p = app.add_subcommand("postprocess", "solve for the SL(H) transform of every draw");
  add_common(p, post.common);
  p->add_option("--chain", post.chain, "chain directory")->required();

  ChainArgs al;
  auto* a = app.add_subcommand("align", "match latent measures to a template draw");
  add_common(a, al.common);
  a->add_option("--chain", al.chain, "chain directory")->required();

  SummarizeArgs sum;
  auto* m = app.add_subcommand("summarize", "posterior summaries, densities and WAIC");
  add_common(m, sum.chain.common);
  m->add_option("--chain", sum.chain.chain, "chain directory")->required();
  m->add_option("--truth", sum.truth, "truth.json from simulate, adds KL to summary.json")->check(CLI::ExistingFile);

  PriorArgs pa;
  auto* r = app.add_subcommand("prior-analyze", "closed-form prior quantities against Monte Carlo");
  r->add_option("--experiment", pa.experiment, "all, moments, corr-iid, mgp-cov, expectation, jump-ratio");
  r->add_option("--draws", pa.draws, "Monte Carlo draws")->check(CLI::PositiveNumber);
  r->add_option("--truncation", pa.K, "atoms in each prior draw")->check(CLI::PositiveNumber);
  r->add_option("--seed", pa.seed, "random seed");
  r->add_option("--threads", pa.threads, "worker threads")->check(CLI::PositiveNumber);
  r->add_option("--out", pa.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim);
    if (f->parsed()) return cmd_fit(fit);
    if (p->parsed()) return cmd_postprocess(post);
    if (a->parsed()) return cmd_align(al);
    if (m->parsed()) return cmd_summarize(sum);
    if (r->parsed()) return cmd_prior(pa);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
