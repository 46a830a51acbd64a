#pragma once

#include <deque>
#include <limits>

#include "kcmlab/spectral.hpp"

namespace kcmlab {

struct TestFunctionResult {
  double lower_bound = std::numeric_limits<double>::quiet_NaN();
  ObservableFunction f;
  std::size_t support = 0;  // members with f = 1
  bool constant = false;    // f is constant on the component: no bound
  double variance = 0.0;
  double dirichlet = 0.0;
};

/// Indicator of the members reachable from the seed through configurations
/// holding fewer than k more infected closure sites than the seed. Its
/// Var/D ratio bounds the relaxation time from below.
inline TestFunctionResult test_function_lower_bound(const ComponentDescriptor& comp, const Configuration& seed,
                                                    int k) {
  if (k < 1) throw PreconditionError("k must be at least 1");
  const Model& m = *comp.model;
  auto start = comp.find(seed);
  if (!start) throw PreconditionError("seed is not a member of the component");

  auto excess = [&](const Configuration& c) {
    int e = 0;
    for (std::size_t p : comp.closure_positions) e += (m.infected(p, c[p]) ? 1 : 0) - (m.infected(p, seed[p]) ? 1 : 0);
    return e;
  };

  std::vector<char> reached(comp.size(), 0);
  reached[*start] = 1;
  std::deque<std::size_t> frontier{*start};
  std::vector<StateIndex> st;
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop_front();
    st.assign(comp.members[i].states().begin(), comp.members[i].states().end());
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (!constraint_at(m, st, p)) continue;
      const StateIndex keep = st[p];
      for (std::size_t s = 0; s < m.num_states(p); ++s) {
        if (static_cast<StateIndex>(s) == keep) continue;
        st[p] = static_cast<StateIndex>(s);
        auto j = comp.find(st);
        if (j && !reached[*j] && excess(comp.members[*j]) < k) {
          reached[*j] = 1;
          frontier.push_back(*j);
        }
      }
      st[p] = keep;
    }
  }

  TestFunctionResult res;
  res.f.values.resize(comp.size());
  for (std::size_t i = 0; i < comp.size(); ++i) {
    res.f.values[i] = reached[i] ? 1.0 : 0.0;
    res.support += reached[i] ? 1 : 0;
  }
  if (res.support == comp.size()) {
    res.constant = true;
    return res;
  }
  res.variance = variance(comp, res.f);
  res.dirichlet = dirichlet_form(comp, res.f);
  res.lower_bound = res.variance / res.dirichlet;
  return res;
}

inline TestFunctionResult test_function_lower_bound(const Model& model, const Configuration& seed, int k,
                                                    std::size_t cap = kDefaultComponentCap) {
  return test_function_lower_bound(enumerate_component(model, seed, cap), seed, k);
}

}  // namespace kcmlab
