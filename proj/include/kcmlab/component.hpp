#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kcmlab/closure.hpp"
#include "kcmlab/model.hpp"

namespace kcmlab {

inline constexpr std::size_t kDefaultComponentCap = std::size_t{1} << 20;
inline constexpr double kProbabilityTolerance = 1e-9;

/// An irreducible component: the closure, the frozen states off it, and the
/// explicit weighted member list.
///
/// Members are stored in mixed-radix order over the closure positions (first
/// closure position varies fastest), so a member's index is recovered from
/// its closure digits through a dense lookup table.
struct ComponentDescriptor {
  std::shared_ptr<const Model> model;
  std::vector<SiteId> closure_set;
  std::map<SiteId, StateIndex> frozen;
  std::vector<Configuration> members;
  std::vector<double> weights;  // product-measure mass over the whole volume
  double normalizer = 0.0;

  std::vector<std::size_t> closure_positions;
  std::vector<std::size_t> strides;
  std::vector<std::int32_t> index_by_code;

  std::size_t size() const noexcept { return members.size(); }
  double mu(std::size_t i) const { return weights[i] / normalizer; }

  std::size_t code(std::span<const StateIndex> states) const {
    std::size_t c = 0;
    for (std::size_t k = 0; k < closure_positions.size(); ++k)
      c += static_cast<std::size_t>(states[closure_positions[k]]) * strides[k];
    return c;
  }

  /// Index of a configuration among the members, if it is one.
  std::optional<std::size_t> find(std::span<const StateIndex> states) const {
    for (const auto& [site, s] : frozen)
      if (states[*model->position(site)] != s) return std::nullopt;
    const std::int32_t i = index_by_code[code(states)];
    if (i < 0) return std::nullopt;
    return static_cast<std::size_t>(i);
  }
  std::optional<std::size_t> find(const Configuration& c) const { return find(c.states()); }
};

namespace detail {

inline double product_cardinality(const Model& model, std::span<const std::size_t> positions) {
  double card = 1.0;
  for (std::size_t p : positions) card *= static_cast<double>(model.num_states(p));
  return card;
}

inline double config_weight(const Model& model, std::span<const StateIndex> states) {
  double w = 1.0;
  for (std::size_t p = 0; p < states.size(); ++p) w *= model.weight(p, states[p]);
  return w;
}

}  // namespace detail

/// Members are all configurations agreeing with the seed off its closure
/// whose closure equals the seed's; computed by filtering the product space
/// over the closure.
inline ComponentDescriptor enumerate_component(const Model& model, const Configuration& seed,
                                               std::size_t cap = kDefaultComponentCap) {
  require_valid(model);
  require_config(model, seed);
  ComponentDescriptor comp;
  comp.model = std::make_shared<const Model>(model);
  const Model& m = *comp.model;
  ClosureEngine engine(m);
  const std::vector<char> target = engine.run(seed.states());
  for (std::size_t p = 0; p < m.size(); ++p) {
    if (target[p]) {
      comp.closure_positions.push_back(p);
      comp.closure_set.push_back(m.site_at(p));
    } else {
      comp.frozen.emplace(m.site_at(p), seed[p]);
    }
  }
  const double card = detail::product_cardinality(m, comp.closure_positions);
  if (card > static_cast<double>(cap)) throw CapExceeded("component enumeration", card, cap);
  const std::size_t total = static_cast<std::size_t>(card);

  std::size_t stride = 1;
  for (std::size_t p : comp.closure_positions) {
    comp.strides.push_back(stride);
    stride *= m.num_states(p);
  }
  comp.index_by_code.assign(total, -1);

  std::vector<StateIndex> st(seed.states().begin(), seed.states().end());
  for (std::size_t p : comp.closure_positions) st[p] = 0;
  for (std::size_t code = 0; code < total; ++code) {
    if (code > 0) {
      // Increment the mixed-radix counter over the closure positions.
      for (std::size_t k = 0; k < comp.closure_positions.size(); ++k) {
        const std::size_t p = comp.closure_positions[k];
        if (static_cast<std::size_t>(++st[p]) < m.num_states(p)) break;
        st[p] = 0;
      }
    }
    const auto& mask = engine.run(st);
    if (mask != target) continue;
    comp.index_by_code[code] = static_cast<std::int32_t>(comp.members.size());
    comp.members.emplace_back(st);
    comp.weights.push_back(detail::config_weight(m, st));
  }
  comp.normalizer = std::accumulate(comp.weights.begin(), comp.weights.end(), 0.0);
  return comp;
}

// ---------------------------------------------------------------------------
// Breadth-first oracle

namespace detail {

// Constraint evaluated straight from the raw rule and boundary maps, sharing
// no code with the compiled tables.
inline bool raw_constraint(const Model& model, std::span<const StateIndex> states, SiteId x) {
  for (const Rule& rule : model.families().at(x).rules) {
    bool ok = true;
    for (SiteId y : rule) {
      StateIndex s;
      if (auto p = model.position(y))
        s = states[*p];
      else
        s = model.boundary().at(y);
      if (!model.sites().at(y).infected[static_cast<std::size_t>(s)]) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  }
  return false;
}

}  // namespace detail

/// Configurations reachable from the seed by single-site moves at sites whose
/// constraint holds. Sorted.
inline std::vector<Configuration> component_oracle_bfs(const Model& model, const Configuration& seed,
                                                       std::size_t cap = kDefaultComponentCap) {
  require_valid(model);
  require_config(model, seed);
  std::vector<std::size_t> all(model.size());
  std::iota(all.begin(), all.end(), 0);
  const double card = detail::product_cardinality(model, all);
  if (card > static_cast<double>(cap)) throw CapExceeded("breadth-first component search", card, cap);

  std::unordered_set<Configuration, ConfigurationHash> seen{seed};
  std::deque<Configuration> frontier{seed};
  while (!frontier.empty()) {
    Configuration c = std::move(frontier.front());
    frontier.pop_front();
    for (std::size_t p = 0; p < model.size(); ++p) {
      if (!detail::raw_constraint(model, c.states(), model.site_at(p))) continue;
      for (std::size_t s = 0; s < model.num_states(p); ++s) {
        if (static_cast<StateIndex>(s) == c[p]) continue;
        Configuration next = c.with(p, static_cast<StateIndex>(s));
        if (seen.insert(next).second) frontier.push_back(std::move(next));
      }
    }
  }
  std::vector<Configuration> out(seen.begin(), seen.end());
  std::sort(out.begin(), out.end());
  return out;
}

/// Sites whose constraint holds in at least one of the given configurations.
inline std::vector<SiteId> updatable_sites(const Model& model, std::span<const Configuration> reachable) {
  std::vector<SiteId> out;
  for (std::size_t p = 0; p < model.size(); ++p) {
    const SiteId x = model.site_at(p);
    for (const auto& c : reachable) {
      if (detail::raw_constraint(model, c.states(), x)) {
        out.push_back(x);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conditional measures

struct ConditionalDistribution {
  std::vector<SiteId> target;                  // X, sorted
  std::map<SiteId, StateIndex> conditioning;   // states on volume \ X
  std::vector<std::vector<StateIndex>> support;  // states on X, in target order
  std::vector<double> probabilities;
  std::vector<std::size_t> member_indices;     // members realizing each support point
};

/// mu restricted to the members matching `outside`. Every closure site outside
/// X must be conditioned on; states given for frozen sites must match.
inline ConditionalDistribution conditional_measure(const ComponentDescriptor& comp, std::vector<SiteId> target,
                                                   const std::map<SiteId, StateIndex>& outside) {
  const Model& m = *comp.model;
  std::sort(target.begin(), target.end());
  target.erase(std::unique(target.begin(), target.end()), target.end());
  std::vector<std::size_t> xpos;
  for (SiteId x : target) {
    auto p = m.position(x);
    if (!p) throw PreconditionError("site " + std::to_string(x) + " is not in the volume");
    xpos.push_back(*p);
  }
  for (SiteId y : comp.closure_set)
    if (!std::binary_search(target.begin(), target.end(), y) && !outside.count(y))
      throw PreconditionError("conditioning omits closure site " + std::to_string(y));
  std::vector<std::pair<std::size_t, StateIndex>> cond;
  for (const auto& [y, s] : outside) {
    auto p = m.position(y);
    if (!p) throw PreconditionError("conditioning site " + std::to_string(y) + " is not in the volume");
    if (std::binary_search(target.begin(), target.end(), y))
      throw PreconditionError("conditioning site " + std::to_string(y) + " lies in the target set");
    cond.emplace_back(*p, s);
  }

  ConditionalDistribution out;
  out.target = target;
  out.conditioning = outside;
  double total = 0.0;
  for (std::size_t i = 0; i < comp.size(); ++i) {
    const auto& c = comp.members[i];
    bool match = std::all_of(cond.begin(), cond.end(), [&](const auto& pc) { return c[pc.first] == pc.second; });
    if (!match) continue;
    std::vector<StateIndex> on_x;
    for (std::size_t p : xpos) on_x.push_back(c[p]);
    out.support.push_back(std::move(on_x));
    out.probabilities.push_back(comp.weights[i]);
    out.member_indices.push_back(i);
    total += comp.weights[i];
  }
  if (out.support.empty() || !(total > 0.0)) throw PreconditionError("empty conditioning slice");
  for (double& p : out.probabilities) p /= total;
  return out;
}

// ---------------------------------------------------------------------------
// Domination by i.i.d. Bernoulli(q)

struct DominationReport {
  double q = 1.0;
  double min_conditional = 1.0;  // 1 when the closure is empty
  std::optional<SiteId> argmin_site;
  std::vector<SiteId> violating_sites;
  bool ok() const noexcept { return violating_sites.empty(); }
};

/// For each closure site x and each conditioning on closure \ {x} with
/// positive mass, checks mu(I_x | conditioning) >= q - 1e-9.
inline DominationReport domination_check(const ComponentDescriptor& comp) {
  const Model& m = *comp.model;
  DominationReport rep;
  rep.q = m.q();
  const std::size_t slots = comp.index_by_code.size();
  std::vector<double> infected_mass, total_mass;
  for (std::size_t k = 0; k < comp.closure_positions.size(); ++k) {
    const std::size_t p = comp.closure_positions[k];
    infected_mass.assign(slots, 0.0);
    total_mass.assign(slots, 0.0);
    for (std::size_t i = 0; i < comp.size(); ++i) {
      const auto& c = comp.members[i];
      const std::size_t key = comp.code(c.states()) - static_cast<std::size_t>(c[p]) * comp.strides[k];
      total_mass[key] += comp.weights[i];
      if (m.infected(p, c[p])) infected_mass[key] += comp.weights[i];
    }
    bool violated = false;
    for (std::size_t key = 0; key < slots; ++key) {
      if (!(total_mass[key] > 0.0)) continue;
      const double cp = infected_mass[key] / total_mass[key];
      if (cp < rep.min_conditional) {
        rep.min_conditional = cp;
        rep.argmin_site = m.site_at(p);
      }
      if (cp < rep.q - kProbabilityTolerance) violated = true;
    }
    if (violated) rep.violating_sites.push_back(m.site_at(p));
  }
  return rep;
}

}  // namespace kcmlab
