#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "kcmlab/model.hpp"

namespace kcmlab {

struct WitnessStep {
  SiteId site = 0;
  std::size_t rule = 0;  // index into the site's update family
  friend bool operator==(const WitnessStep&, const WitnessStep&) = default;
};

struct ClosureResult {
  std::vector<SiteId> closure_set;         // sorted
  std::map<SiteId, StateIndex> frozen;     // the configuration off the closure
  std::vector<WitnessStep> witness_order;  // order in which sites joined
  std::vector<char> in_closure;            // per volume position
};

/// Monotone fixed point computing the set of eventually updatable sites.
///
/// A region restricts the computation to a subset of volume positions: sites
/// outside it act as a frozen boundary with their current states, so the
/// closure is taken inside the region only. Buffers are reused across calls.
class ClosureEngine {
 public:
  explicit ClosureEngine(const Model& model) : model_(&model) {}

  /// Returns a per-position membership mask (valid until the next call).
  const std::vector<char>& run(std::span<const StateIndex> states, std::span<const char> region = {},
                               std::vector<std::pair<std::size_t, std::size_t>>* witness = nullptr) {
    const Model& m = *model_;
    const std::size_t n = m.size();
    in_.assign(n, 0);
    queued_.assign(n, 0);
    work_.clear();
    for (std::size_t p = 0; p < n; ++p) {
      if (!region.empty() && !region[p]) continue;
      work_.push_back(p);
      queued_[p] = 1;
    }
    // FIFO over a growing vector; a site is re-queued when a rule neighbour joins.
    for (std::size_t head = 0; head < work_.size(); ++head) {
      const std::size_t p = work_[head];
      queued_[p] = 0;
      if (in_[p]) continue;
      auto rules = m.rules_at(p);
      for (std::size_t r = 0; r < rules.size(); ++r) {
        const CompiledRule& rule = rules[r];
        if (rule.blocked) continue;
        bool ok = true;
        for (std::size_t y : rule.positions) {
          if (!in_[y] && !m.infected(y, states[y])) {
            ok = false;
            break;
          }
        }
        if (!ok) continue;
        in_[p] = 1;
        if (witness) witness->emplace_back(p, r);
        for (std::size_t d : m.dependents(p)) {
          if (in_[d] || queued_[d]) continue;
          if (!region.empty() && !region[d]) continue;
          queued_[d] = 1;
          work_.push_back(d);
        }
        break;
      }
    }
    return in_;
  }

 private:
  const Model* model_;
  std::vector<char> in_, queued_;
  std::vector<std::size_t> work_;
};

inline ClosureResult closure(const Model& model, const Configuration& config) {
  require_config(model, config);
  ClosureEngine engine(model);
  std::vector<std::pair<std::size_t, std::size_t>> witness;
  const auto& mask = engine.run(config.states(), {}, &witness);
  ClosureResult out;
  out.in_closure = mask;
  for (std::size_t p = 0; p < model.size(); ++p) {
    if (mask[p])
      out.closure_set.push_back(model.site_at(p));
    else
      out.frozen.emplace(model.site_at(p), config[p]);
  }
  for (auto [p, r] : witness) out.witness_order.push_back({model.site_at(p), r});
  return out;
}

// ---------------------------------------------------------------------------
// Simplification

struct RuleRewrite {
  SiteId site = 0;  // original id
  Rule original;
  std::optional<Rule> rewritten;  // nullopt: removed; original ids
};

struct SimplificationProvenance {
  std::map<SiteId, StateIndex> dropped_frozen;  // volume sites merged into the boundary
  std::vector<RuleRewrite> rewrites;            // only rules that changed
};

struct SimplifiedModel {
  Model model;                     // volume {1..|L'|}, no boundary
  std::map<SiteId, SiteId> site_map;  // original closure site -> new id
  SimplificationProvenance provenance;
  Configuration carried;           // the configuration restricted to the closure
  bool degenerate = false;         // empty closure
};

/// Drops the sites off the closure into the boundary, absorbs the boundary
/// into the rules and relabels the remainder onto {1..|L'|} preserving order.
inline SimplifiedModel simplify(const Model& model, const Configuration& config) {
  require_valid(model);
  const ClosureResult cl = closure(model, config);
  SimplifiedModel out;
  out.provenance.dropped_frozen = cl.frozen;

  SiteId next = 1;
  for (SiteId x : cl.closure_set) out.site_map.emplace(x, next++);

  auto boundary_state = [&](SiteId y) -> std::pair<StateIndex, const SiteStateSpace*> {
    if (auto p = model.position(y)) return {config[*p], &model.space(y)};
    return {model.boundary().at(y), &model.space(y)};
  };

  std::vector<SiteId> volume;
  std::map<SiteId, SiteStateSpace> sites;
  std::map<SiteId, UpdateFamily> families;
  std::vector<StateIndex> carried;
  for (SiteId x : cl.closure_set) {
    const SiteId nx = out.site_map.at(x);
    volume.push_back(nx);
    sites.emplace(nx, model.space(x));
    carried.push_back(config[*model.position(x)]);
    UpdateFamily fam;
    for (const Rule& rule : model.families().at(x).rules) {
      Rule kept_original;
      Rule relabeled;
      bool removed = false;
      for (SiteId y : rule) {
        if (auto it = out.site_map.find(y); it != out.site_map.end()) {
          relabeled.push_back(it->second);
          kept_original.push_back(y);
          continue;
        }
        auto [s, sp] = boundary_state(y);
        if (!sp->infected[s]) {
          removed = true;
          break;
        }
      }
      if (removed) {
        out.provenance.rewrites.push_back({x, rule, std::nullopt});
        continue;
      }
      if (kept_original.size() != rule.size()) out.provenance.rewrites.push_back({x, rule, kept_original});
      fam.rules.push_back(std::move(relabeled));
    }
    std::sort(fam.rules.begin(), fam.rules.end());
    fam.rules.erase(std::unique(fam.rules.begin(), fam.rules.end()), fam.rules.end());
    families.emplace(nx, std::move(fam));
  }
  out.degenerate = volume.empty();
  out.carried = Configuration(carried);
  out.model = Model(std::move(volume), std::move(sites), std::move(families), {}, Configuration(std::move(carried)));
  return out;
}

/// True iff the model has no boundary, an interval volume {1..n}, and every
/// rule lies inside the volume.
inline bool is_simplified_form(const Model& model) {
  if (!model.boundary().empty()) return false;
  for (std::size_t p = 0; p < model.size(); ++p)
    if (model.site_at(p) != static_cast<SiteId>(p + 1)) return false;
  for (const auto& [x, fam] : model.families())
    for (const auto& r : fam.rules)
      for (SiteId y : r)
        if (!model.position(y)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Isolation

/// For a fully infected block {first..first+2R} inside the volume and a
/// configuration with full closure, checks that the closure of the sites left
/// of the block, using the block (and the original boundary) as boundary
/// condition, is all of them. Broken preconditions throw PreconditionError.
inline bool check_isolation(const Model& model, const Configuration& config, SiteId first) {
  require_config(model, config);
  const int width = 2 * model.range() + 1;
  std::vector<std::size_t> block;
  for (int k = 0; k < width; ++k) {
    auto p = model.position(first + k);
    if (!p) throw PreconditionError("block site " + std::to_string(first + k) + " is not in the volume");
    if (!model.infected(*p, config[*p])) throw PreconditionError("block is not fully infected");
    block.push_back(*p);
  }
  ClosureEngine engine(model);
  const auto& full = engine.run(config.states());
  if (std::find(full.begin(), full.end(), 0) != full.end())
    throw PreconditionError("closure of the configuration is not the whole volume");

  const SiteId x = first - 1;
  std::vector<char> region(model.size(), 0);
  bool any = false;
  for (std::size_t p = 0; p < model.size(); ++p)
    if (model.site_at(p) <= x) region[p] = 1, any = true;
  if (!any) return true;
  const auto& left = engine.run(config.states(), region);
  for (std::size_t p = 0; p < model.size(); ++p)
    if (region[p] && !left[p]) return false;
  return true;
}

}  // namespace kcmlab
