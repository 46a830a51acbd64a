#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kcmlab/error.hpp"

namespace kcmlab {

using SiteId = int;
using StateIndex = int;

inline constexpr double kWeightTolerance = 1e-12;

/// Finite on-site probability space with a distinguished infection event.
struct SiteStateSpace {
  std::vector<std::string> labels;
  std::vector<double> weights;
  std::vector<bool> infected;  // per state

  std::size_t size() const noexcept { return labels.size(); }

  double infected_weight() const noexcept {
    double w = 0.0;
    for (std::size_t s = 0; s < weights.size() && s < infected.size(); ++s)
      if (infected[s]) w += weights[s];
    return w;
  }

  std::optional<StateIndex> index_of(std::string_view label) const {
    for (std::size_t s = 0; s < labels.size(); ++s)
      if (labels[s] == label) return static_cast<StateIndex>(s);
    return std::nullopt;
  }

  /// States "0" (healthy, 1-q) and "1" (infected, q). For q = 1 the healthy
  /// state would carry zero mass, so the space collapses to {"1"}.
  static SiteStateSpace binary(double q) {
    if (q >= 1.0) return {{"1"}, {1.0}, {true}};
    return {{"0", "1"}, {1.0 - q, q}, {false, true}};
  }

  friend bool operator==(const SiteStateSpace&, const SiteStateSpace&) = default;
};

/// Sorted absolute site ids.
using Rule = std::vector<SiteId>;

/// An empty family means the site is frozen; a family holding the empty rule
/// means the site is unconstrained.
struct UpdateFamily {
  std::vector<Rule> rules;

  static UpdateFamily frozen() { return {}; }
  static UpdateFamily unconstrained() { return {{Rule{}}}; }

  friend bool operator==(const UpdateFamily&, const UpdateFamily&) = default;
};

/// One state per volume site, indexed by position in the (sorted) volume.
class Configuration {
 public:
  Configuration() = default;
  explicit Configuration(std::vector<StateIndex> states) : states_(std::move(states)) {}

  std::size_t size() const noexcept { return states_.size(); }
  StateIndex operator[](std::size_t pos) const { return states_[pos]; }
  void set(std::size_t pos, StateIndex s) { states_[pos] = s; }
  std::span<const StateIndex> states() const noexcept { return states_; }
  std::vector<StateIndex>& mutable_states() noexcept { return states_; }

  Configuration with(std::size_t pos, StateIndex s) const {
    Configuration c = *this;
    c.states_[pos] = s;
    return c;
  }

  friend auto operator<=>(const Configuration&, const Configuration&) = default;

 private:
  std::vector<StateIndex> states_;
};

struct ConfigurationHash {
  std::size_t operator()(const Configuration& c) const noexcept {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (StateIndex s : c.states()) h = (h ^ static_cast<std::size_t>(s + 1)) * 0x100000001b3ULL;
    return h;
  }
};

/// A rule compiled against the volume: positions that must be infected, and
/// whether a boundary site makes the rule permanently unsatisfiable.
struct CompiledRule {
  std::vector<std::size_t> positions;
  bool blocked = false;
};

/// General one-dimensional KCM on a finite volume with a boundary condition.
///
/// The raw data is kept as given, so an ill-formed model can exist and be
/// reported by validate(). Every other operation assumes validate() passed.
class Model {
 public:
  Model() = default;

  Model(std::vector<SiteId> volume, std::map<SiteId, SiteStateSpace> sites,
        std::map<SiteId, UpdateFamily> families, std::map<SiteId, StateIndex> boundary,
        std::optional<Configuration> initial = std::nullopt)
      : volume_(std::move(volume)),
        sites_(std::move(sites)),
        families_(std::move(families)),
        boundary_(std::move(boundary)),
        initial_(std::move(initial)) {
    std::sort(volume_.begin(), volume_.end());
    for (auto& [id, fam] : families_) {
      for (auto& rule : fam.rules) std::sort(rule.begin(), rule.end());
      std::sort(fam.rules.begin(), fam.rules.end());
    }
    compile();
  }

  // Compiled tables point into sites_, so copies recompile.
  Model(const Model& o)
      : volume_(o.volume_), sites_(o.sites_), families_(o.families_), boundary_(o.boundary_), initial_(o.initial_) {
    compile();
  }
  Model& operator=(const Model& o) {
    if (this != &o) {
      Model tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const std::vector<SiteId>& volume() const noexcept { return volume_; }
  std::size_t size() const noexcept { return volume_.size(); }
  const std::map<SiteId, SiteStateSpace>& sites() const noexcept { return sites_; }
  const std::map<SiteId, UpdateFamily>& families() const noexcept { return families_; }
  const std::map<SiteId, StateIndex>& boundary() const noexcept { return boundary_; }
  const std::optional<Configuration>& initial() const noexcept { return initial_; }

  /// Max distance from a site to its rule sites, at least 1.
  int range() const noexcept { return range_; }
  /// Minimum infected weight over volume sites (1 for an empty volume).
  double q() const noexcept { return q_; }

  std::optional<std::size_t> position(SiteId id) const {
    auto it = std::lower_bound(volume_.begin(), volume_.end(), id);
    if (it == volume_.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - volume_.begin());
  }
  SiteId site_at(std::size_t pos) const { return volume_[pos]; }

  const SiteStateSpace& space(SiteId id) const {
    auto it = sites_.find(id);
    if (it == sites_.end()) throw PreconditionError("no state space for site " + std::to_string(id));
    return it->second;
  }
  const SiteStateSpace& space_at(std::size_t pos) const { return *space_ptr_[pos]; }
  std::size_t num_states(std::size_t pos) const { return space_ptr_[pos] ? space_ptr_[pos]->size() : 0; }
  double weight(std::size_t pos, StateIndex s) const { return space_ptr_[pos]->weights[s]; }
  bool infected(std::size_t pos, StateIndex s) const { return space_ptr_[pos]->infected[s]; }

  std::span<const CompiledRule> rules_at(std::size_t pos) const { return compiled_[pos]; }
  /// Positions whose rules reference position pos.
  std::span<const std::size_t> dependents(std::size_t pos) const { return dependents_[pos]; }

  Model with_initial(std::optional<Configuration> c) const {
    Model m = *this;
    m.initial_ = std::move(c);
    return m;
  }

  /// Initial configuration if present, otherwise the all-first-state one.
  Configuration initial_or_default() const {
    if (initial_) return *initial_;
    return Configuration(std::vector<StateIndex>(size(), 0));
  }

  friend bool operator==(const Model& a, const Model& b) {
    return a.volume_ == b.volume_ && a.sites_ == b.sites_ && a.families_ == b.families_ &&
           a.boundary_ == b.boundary_ && a.initial_ == b.initial_;
  }

 private:
  void compile() {
    const std::size_t n = volume_.size();
    space_ptr_.assign(n, nullptr);
    compiled_.assign(n, {});
    dependents_.assign(n, {});
    range_ = 1;
    q_ = 1.0;
    for (std::size_t p = 0; p < n; ++p) {
      const SiteId x = volume_[p];
      if (auto it = sites_.find(x); it != sites_.end()) {
        space_ptr_[p] = &it->second;
        q_ = std::min(q_, it->second.infected_weight());
      } else {
        q_ = 0.0;
      }
      auto fit = families_.find(x);
      if (fit == families_.end()) continue;
      for (const Rule& rule : fit->second.rules) {
        CompiledRule cr;
        for (SiteId y : rule) {
          range_ = std::max(range_, std::abs(y - x));
          if (auto py = position(y)) {
            cr.positions.push_back(*py);
            continue;
          }
          auto bit = boundary_.find(y);
          auto sit = sites_.find(y);
          if (bit == boundary_.end() || sit == sites_.end() || bit->second < 0 ||
              static_cast<std::size_t>(bit->second) >= sit->second.size() ||
              !sit->second.infected[bit->second])
            cr.blocked = true;
        }
        std::sort(cr.positions.begin(), cr.positions.end());
        cr.positions.erase(std::unique(cr.positions.begin(), cr.positions.end()), cr.positions.end());
        for (std::size_t py : cr.positions) dependents_[py].push_back(p);
        compiled_[p].push_back(std::move(cr));
      }
    }
    for (auto& d : dependents_) {
      std::sort(d.begin(), d.end());
      d.erase(std::unique(d.begin(), d.end()), d.end());
    }
  }

  std::vector<SiteId> volume_;
  std::map<SiteId, SiteStateSpace> sites_;
  std::map<SiteId, UpdateFamily> families_;
  std::map<SiteId, StateIndex> boundary_;
  std::optional<Configuration> initial_;

  std::vector<const SiteStateSpace*> space_ptr_;
  std::vector<std::vector<CompiledRule>> compiled_;
  std::vector<std::vector<std::size_t>> dependents_;
  int range_ = 1;
  double q_ = 1.0;
};

// ---------------------------------------------------------------------------
// Constraints

/// Constraint at volume position pos for a state vector over the volume.
inline bool constraint_at(const Model& model, std::span<const StateIndex> states, std::size_t pos) {
  for (const CompiledRule& rule : model.rules_at(pos)) {
    if (rule.blocked) continue;
    bool ok = true;
    for (std::size_t y : rule.positions) {
      if (!model.infected(y, states[y])) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  }
  return false;
}

inline bool constraint_satisfied(const Model& model, const Configuration& config, SiteId site) {
  auto pos = model.position(site);
  if (!pos) throw PreconditionError("unknown site id " + std::to_string(site));
  if (config.size() != model.size()) throw PreconditionError("configuration size does not match volume");
  return constraint_at(model, config.states(), *pos);
}

inline bool is_infected(const Model& model, const Configuration& config, std::size_t pos) {
  return model.infected(pos, config[pos]);
}

/// Restriction of a configuration to a set of sites, keyed by site id.
inline std::map<SiteId, StateIndex> restrict_to(const Model& model, const Configuration& config,
                                                std::span<const SiteId> sites) {
  std::map<SiteId, StateIndex> out;
  for (SiteId x : sites) {
    auto p = model.position(x);
    if (!p) throw PreconditionError("site " + std::to_string(x) + " is not in the volume");
    out.emplace(x, config[*p]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  SiteId site = 0;
  std::optional<std::size_t> rule;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
  std::string summary() const {
    std::string s;
    for (const auto& v : violations) {
      s += "site " + std::to_string(v.site);
      if (v.rule) s += " rule " + std::to_string(*v.rule);
      s += ": " + v.message + "\n";
    }
    return s;
  }
};

namespace detail {

inline void check_space(SiteId id, const SiteStateSpace& sp, std::vector<Violation>& out) {
  if (sp.labels.empty()) {
    out.push_back({id, std::nullopt, "state space is empty"});
    return;
  }
  if (sp.weights.size() != sp.labels.size() || sp.infected.size() != sp.labels.size()) {
    out.push_back({id, std::nullopt, "state space arrays have mismatched lengths"});
    return;
  }
  std::vector<std::string> sorted = sp.labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    out.push_back({id, std::nullopt, "state labels are not distinct"});
  double total = 0.0;
  for (double w : sp.weights) {
    if (!(w > 0.0) || !std::isfinite(w)) out.push_back({id, std::nullopt, "weights must be positive"});
    total += w;
  }
  if (std::abs(total - 1.0) > kWeightTolerance) out.push_back({id, std::nullopt, "weights must sum to 1"});
  if (std::none_of(sp.infected.begin(), sp.infected.end(), [](bool b) { return b; }))
    out.push_back({id, std::nullopt, "infected set is empty"});
  if (!(sp.infected_weight() > 0.0)) out.push_back({id, std::nullopt, "q must be positive"});
}

}  // namespace detail

inline ValidationReport validate(const Model& model) {
  ValidationReport report;
  auto& out = report.violations;
  const auto& volume = model.volume();
  if (std::adjacent_find(volume.begin(), volume.end()) != volume.end())
    out.push_back({0, std::nullopt, "volume contains duplicate sites"});
  if (volume.empty()) out.push_back({0, std::nullopt, "volume is empty"});

  for (const auto& [id, sp] : model.sites()) detail::check_space(id, sp, out);

  for (SiteId x : volume) {
    if (!model.sites().count(x)) out.push_back({x, std::nullopt, "missing state space for volume site"});
    if (!model.families().count(x)) out.push_back({x, std::nullopt, "missing update family"});
    if (model.boundary().count(x)) out.push_back({x, std::nullopt, "boundary state given for volume site"});
  }
  for (const auto& [x, fam] : model.families()) {
    if (!model.position(x)) {
      out.push_back({x, std::nullopt, "update family given for non-volume site"});
      continue;
    }
    for (std::size_t r = 0; r < fam.rules.size(); ++r) {
      for (SiteId y : fam.rules[r]) {
        if (y == x) {
          out.push_back({x, r, "rule contains own site"});
          continue;
        }
        if (model.position(y)) continue;
        auto bit = model.boundary().find(y);
        if (bit == model.boundary().end()) {
          out.push_back({x, r, "boundary state missing for referenced site " + std::to_string(y)});
          continue;
        }
        auto sit = model.sites().find(y);
        if (sit == model.sites().end()) {
          out.push_back({x, r, "missing state space for boundary site " + std::to_string(y)});
          continue;
        }
        if (bit->second < 0 || static_cast<std::size_t>(bit->second) >= sit->second.size())
          out.push_back({y, std::nullopt, "boundary state index out of range"});
      }
    }
  }
  if (const auto& init = model.initial()) {
    if (init->size() != model.size()) {
      out.push_back({0, std::nullopt, "initial configuration size does not match volume"});
    } else {
      for (std::size_t p = 0; p < init->size(); ++p)
        if ((*init)[p] < 0 || static_cast<std::size_t>((*init)[p]) >= model.num_states(p))
          out.push_back({model.site_at(p), std::nullopt, "initial state index out of range"});
    }
  }
  if (!volume.empty() && !(model.q() > 0.0 && model.q() <= 1.0 + kWeightTolerance) &&
      std::none_of(out.begin(), out.end(), [](const Violation& v) { return v.message == "q must be positive"; }))
    out.push_back({0, std::nullopt, "q must be positive"});
  return report;
}

inline void require_valid(const Model& model) {
  auto report = validate(model);
  if (!report.ok()) throw ValidationError("invalid model:\n" + report.summary());
}

inline void require_config(const Model& model, const Configuration& config) {
  if (config.size() != model.size()) throw PreconditionError("configuration size does not match volume");
  for (std::size_t p = 0; p < config.size(); ++p)
    if (config[p] < 0 || static_cast<std::size_t>(config[p]) >= model.num_states(p))
      throw PreconditionError("state index out of range at site " + std::to_string(model.site_at(p)));
}

}  // namespace kcmlab
