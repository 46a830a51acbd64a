#pragma once

#include <set>

#include "kcmlab/model.hpp"
#include "kcmlab/model_io.hpp"
#include "kcmlab/rng.hpp"

namespace kcmlab {

struct RandomModelParams {
  int max_sites = 6;
  int max_states = 3;
  int max_range = 2;
  int max_rules = 3;
  double p_frozen = 0.1;
  double p_unconstrained = 0.1;
  double p_gapped = 0.3;  // non-interval volume
};

/// Deterministic random model for the invariant suites. Every model passes
/// validate(); the initial configuration is drawn uniformly.
inline Model random_model(const RandomModelParams& gp, std::uint64_t seed) {
  if (gp.max_sites < 1 || gp.max_states < 1 || gp.max_range < 1 || gp.max_rules < 1)
    throw PreconditionError("generator bounds must be positive");
  CounterRng rng(seed, 0x6d6f64656cULL);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };

  const int n = pick(1, gp.max_sites);
  const int R = pick(1, gp.max_range);
  std::vector<SiteId> volume;
  SiteId at = pick(-3, 3);
  const bool gapped = rng.uniform() < gp.p_gapped;
  for (int k = 0; k < n; ++k) {
    volume.push_back(at);
    at += gapped ? pick(1, 2) : 1;
  }
  const std::set<SiteId> in_volume(volume.begin(), volume.end());

  auto random_space = [&] {
    SiteStateSpace sp;
    const int k = pick(1, gp.max_states);
    for (int s = 0; s < k; ++s) {
      sp.labels.push_back(std::string(1, static_cast<char>('a' + s)));
      sp.weights.push_back(0.1 + rng.uniform());
      sp.infected.push_back(rng.uniform() < 0.5);
    }
    sp.infected[rng.below(static_cast<std::uint64_t>(k))] = true;
    normalize_weights(sp.weights);
    return sp;
  };

  std::map<SiteId, SiteStateSpace> sites;
  std::map<SiteId, UpdateFamily> families;
  std::map<SiteId, StateIndex> boundary;
  for (SiteId x : volume) sites.emplace(x, random_space());
  for (SiteId x : volume) {
    UpdateFamily fam;
    const double u = rng.uniform();
    if (u < gp.p_frozen) {
      families.emplace(x, fam);
      continue;
    }
    if (u < gp.p_frozen + gp.p_unconstrained) {
      families.emplace(x, UpdateFamily::unconstrained());
      continue;
    }
    std::vector<int> offsets;
    for (int d = -R; d <= R; ++d)
      if (d != 0) offsets.push_back(d);
    const int rules = pick(1, gp.max_rules);
    for (int r = 0; r < rules; ++r) {
      const int size = pick(1, std::min<int>(3, static_cast<int>(offsets.size())));
      std::vector<int> pool = offsets;
      Rule rule;
      for (int k = 0; k < size; ++k) {
        const std::size_t i = rng.below(pool.size());
        rule.push_back(x + pool[i]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
      }
      for (SiteId y : rule) {
        if (in_volume.count(y) || sites.count(y)) continue;
        sites.emplace(y, random_space());
      }
      fam.rules.push_back(std::move(rule));
    }
    families.emplace(x, std::move(fam));
  }
  for (const auto& [y, sp] : sites)
    if (!in_volume.count(y)) boundary[y] = static_cast<StateIndex>(rng.below(sp.size()));

  std::vector<StateIndex> init;
  for (SiteId x : volume) init.push_back(static_cast<StateIndex>(rng.below(sites.at(x).size())));
  Model m(std::move(volume), std::move(sites), std::move(families), std::move(boundary), Configuration(std::move(init)));
  require_valid(m);
  return m;
}

}  // namespace kcmlab
