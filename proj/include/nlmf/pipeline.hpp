#pragma once

// Whole-chain drivers for post-processing and alignment.

#include <algorithm>
#include <span>
#include <thread>
#include <vector>

#include "nlmf/alignment.hpp"
#include "nlmf/gibbs.hpp"
#include "nlmf/slopt.hpp"

namespace nlmf {

struct PostprocessConfig {
  AlmConfig alm;
  long chunk = 64;                // draws per sequential block
  bool warm_from_previous = true;  // within a block, start from the previous draw's Q
  int threads = 1;
};

/// One ALM solve per draw. Blocks of `chunk` draws are solved sequentially,
/// the first draw of each block from the identity, so the output does not
/// depend on the number of threads.
inline std::vector<TransformResult> postprocess_chain(const ChainRecord& chain, const PostprocessConfig& cfg) {
  if (cfg.chunk < 1) throw InputError("postprocess: chunk must be >= 1");
  cfg.alm.validate();
  const long n = static_cast<long>(chain.draws.size());
  std::vector<TransformResult> out(chain.draws.size());
  const long nblocks = (n + cfg.chunk - 1) / cfg.chunk;
  auto block = [&](long b) {
    std::optional<MatrixXd> start;
    for (long l = b * cfg.chunk; l < std::min(n, (b + 1) * cfg.chunk); ++l) {
      const auto& d = chain.draws[l];
      TruncatedCoRM corm(d.atoms, d.J, d.M);
      out[l] = alm_solve(corm, LoadingsMatrix(d.Lambda), cfg.alm, start);
      if (cfg.warm_from_previous && out[l].status == AlmStatus::Converged) start = out[l].Q;
      else start.reset();
    }
  };
  const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(nblocks)));
  if (threads == 1) {
    for (long b = 0; b < nblocks; ++b) block(b);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (long b = t; b < nblocks; b += threads) block(b);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

/// Fills transforms[l].perm for every draw and returns the template index.
inline std::size_t align_chain(const ChainRecord& chain, std::vector<TransformResult>& transforms,
                               AlignMetric metric = AlignMetric::L2) {
  const Template tmpl = select_template(chain, transforms);
  for (std::size_t l = 0; l < chain.draws.size(); ++l)
    transforms[l].perm = align_draw(transformed_measures(chain.draws[l], transforms[l].Q), tmpl, metric);
  return tmpl.draw;
}

}  // namespace nlmf
