#pragma once

#include <set>
#include <string>
#include <vector>

#include "kcmlab/model.hpp"

namespace kcmlab {

struct ZooParams {
  int n = 3;
  double q = 0.5;
  // "infected", "healthy", "left" (left infected, right healthy) or "right".
  // Empty selects the model's default.
  std::string boundary;
};

namespace detail {

inline bool boundary_infected(const std::string& choice, bool left_side) {
  if (choice == "infected") return true;
  if (choice == "healthy") return false;
  if (choice == "left") return left_side;
  if (choice == "right") return !left_side;
  throw PreconditionError("unknown boundary choice '" + choice + "'");
}

// Homogeneous model on {1..size} with rule offsets; boundary sites are added
// only where a rule references them.
inline Model homogeneous(int size, double q, const std::vector<std::vector<int>>& offsets,
                         const std::string& boundary, const std::set<int>& initially_infected) {
  if (!(q > 0.0 && q <= 1.0)) throw PreconditionError("q must lie in (0, 1]");
  std::vector<SiteId> volume;
  std::map<SiteId, SiteStateSpace> sites;
  std::map<SiteId, UpdateFamily> families;
  std::map<SiteId, StateIndex> bc;
  const SiteStateSpace sp = SiteStateSpace::binary(q);
  const StateIndex healthy = 0;
  const StateIndex infected = static_cast<StateIndex>(sp.size() - 1);
  for (int x = 1; x <= size; ++x) {
    volume.push_back(x);
    sites.emplace(x, sp);
    UpdateFamily fam;
    for (const auto& off : offsets) {
      Rule r;
      for (int d : off) {
        const int y = x + d;
        r.push_back(y);
        if (y < 1 || y > size) {
          sites.emplace(y, sp);
          bc[y] = (boundary_infected(boundary, y < 1) || sp.size() == 1) ? infected : healthy;
        }
      }
      fam.rules.push_back(std::move(r));
    }
    families.emplace(x, std::move(fam));
  }
  std::vector<StateIndex> init(static_cast<std::size_t>(size), healthy);
  for (int x : initially_infected) init[static_cast<std::size_t>(x - 1)] = infected;
  return Model(std::move(volume), std::move(sites), std::move(families), std::move(bc), Configuration(init));
}

}  // namespace detail

inline const std::vector<std::string>& zoo_names() {
  static const std::vector<std::string> names{"east", "fa1f", "unrooted-2n", "six-rule"};
  return names;
}

/// East: {{x-1}} on {1..n}, default left boundary infected, all healthy
/// initially. FA-1f: {{x-1},{x+1}} on {1..n}, default left boundary infected.
/// unrooted-2n: {{x-2},{x+1,x+2}} on {1..2n}, healthy boundary, sites 1 and 2n
/// infected. six-rule: the six three-site rules on {1..6n+3}, healthy
/// boundary, initial infections {1,2,4,6n-1,6n,6n+3}.
inline Model build_zoo_model(const std::string& name, const ZooParams& params) {
  const int n = params.n;
  if (name == "east") {
    if (n < 1) throw PreconditionError("east needs n >= 1");
    return detail::homogeneous(n, params.q, {{-1}}, params.boundary.empty() ? "left" : params.boundary, {});
  }
  if (name == "fa1f") {
    if (n < 1) throw PreconditionError("fa1f needs n >= 1");
    return detail::homogeneous(n, params.q, {{-1}, {1}}, params.boundary.empty() ? "left" : params.boundary, {});
  }
  if (name == "unrooted-2n") {
    if (n < 1) throw PreconditionError("unrooted-2n needs n >= 1");
    return detail::homogeneous(2 * n, params.q, {{-2}, {1, 2}},
                               params.boundary.empty() ? "healthy" : params.boundary, {1, 2 * n});
  }
  if (name == "six-rule") {
    // The left group {1,2,4} and right group {6n-1,6n,6n+3} must not overlap.
    if (n < 1) throw PreconditionError("six-rule needs n >= 1 (initial groups overlap otherwise)");
    return detail::homogeneous(6 * n + 3, params.q,
                               {{-9, -8, -6}, {-7, -6, -4}, {-6, -5, -3}, {3, 5, 6}, {4, 6, 7}, {6, 8, 9}},
                               params.boundary.empty() ? "healthy" : params.boundary,
                               {1, 2, 4, 6 * n - 1, 6 * n, 6 * n + 3});
  }
  throw PreconditionError("unknown zoo model '" + name + "'");
}

}  // namespace kcmlab
