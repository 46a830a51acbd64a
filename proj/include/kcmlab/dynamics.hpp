#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "kcmlab/block.hpp"
#include "kcmlab/spectral.hpp"

namespace kcmlab {

struct NamedObservable {
  std::string name;
  std::function<double(std::span<const StateIndex>)> fn;
};

inline NamedObservable infection_density(const Model& model) {
  auto m = std::make_shared<const Model>(model);
  return {"density", [m](std::span<const StateIndex> st) {
            if (st.empty()) return 0.0;
            double c = 0.0;
            for (std::size_t p = 0; p < st.size(); ++p) c += m->infected(p, st[p]) ? 1.0 : 0.0;
            return c / static_cast<double>(st.size());
          }};
}

inline NamedObservable site_indicator(const Model& model, SiteId site) {
  auto m = std::make_shared<const Model>(model);
  auto pos = m->position(site);
  if (!pos) throw PreconditionError("site " + std::to_string(site) + " is not in the volume");
  const std::size_t p = *pos;
  return {"site:" + std::to_string(site),
          [m, p](std::span<const StateIndex> st) { return m->infected(p, st[p]) ? 1.0 : 0.0; }};
}

/// Wraps a component observable (such as a test function) as a state observable.
inline NamedObservable component_observable(std::string name, const ComponentDescriptor& comp,
                                            ObservableFunction f) {
  auto c = std::make_shared<const ComponentDescriptor>(comp);
  auto v = std::make_shared<const std::vector<double>>(std::move(f.values));
  return {std::move(name), [c, v](std::span<const StateIndex> st) {
            auto i = c->find(st);
            return i ? (*v)[*i] : 0.0;
          }};
}

struct SimulationConfig {
  double horizon = 1.0;
  std::uint64_t seed = 0;
  std::size_t replicas = 1;
  std::vector<NamedObservable> observables;
  std::size_t jobs = 1;
};

struct ReplicaStatistics {
  std::size_t replica = 0;
  std::vector<double> time_averages;  // in observable order
  std::uint64_t events = 0;           // clock rings
  std::uint64_t accepted = 0;         // rings with satisfied constraint
  Configuration final_config;
};

/// Exact continuous-time dynamics: rings at total rate |L| with a uniformly
/// chosen site; a site with satisfied constraint is resampled from pi_x.
inline ReplicaStatistics simulate_replica(const Model& model, const Configuration& start,
                                          const SimulationConfig& cfg, std::size_t replica) {
  ReplicaStatistics out;
  out.replica = replica;
  out.time_averages.assign(cfg.observables.size(), 0.0);
  std::vector<StateIndex> st(start.states().begin(), start.states().end());
  const std::size_t n = model.size();
  CounterRng rng(cfg.seed, replica);
  std::vector<double> current(cfg.observables.size());
  for (std::size_t k = 0; k < current.size(); ++k) current[k] = cfg.observables[k].fn(st);
  double t = 0.0;
  if (n > 0) {
    while (true) {
      const double dt = rng.exponential(static_cast<double>(n));
      const double step = std::min(dt, cfg.horizon - t);
      for (std::size_t k = 0; k < current.size(); ++k) out.time_averages[k] += current[k] * step;
      t += dt;
      if (t >= cfg.horizon) break;
      const std::size_t p = static_cast<std::size_t>(rng.below(n));
      ++out.events;
      const double u = rng.uniform();
      if (!constraint_at(model, st, p)) continue;
      ++out.accepted;
      double acc = 0.0;
      StateIndex s = static_cast<StateIndex>(model.num_states(p) - 1);
      for (std::size_t k = 0; k < model.num_states(p); ++k) {
        acc += model.weight(p, static_cast<StateIndex>(k));
        if (u < acc) {
          s = static_cast<StateIndex>(k);
          break;
        }
      }
      if (s == st[p]) continue;
      st[p] = s;
      for (std::size_t k = 0; k < current.size(); ++k) current[k] = cfg.observables[k].fn(st);
    }
  } else {
    for (std::size_t k = 0; k < current.size(); ++k) out.time_averages[k] = current[k] * cfg.horizon;
  }
  for (double& v : out.time_averages) v /= cfg.horizon;
  out.final_config = Configuration(std::move(st));
  return out;
}

inline std::vector<ReplicaStatistics> simulate_kcm(const Model& model, const Configuration& start,
                                                   const SimulationConfig& cfg) {
  require_valid(model);
  require_config(model, start);
  if (!(cfg.horizon > 0.0)) throw PreconditionError("horizon must be positive");
  if (cfg.replicas < 1) throw PreconditionError("replica count must be at least 1");
  std::vector<ReplicaStatistics> out(cfg.replicas);
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cfg.replicas));
  if (jobs == 1) {
    for (std::size_t r = 0; r < cfg.replicas; ++r) out[r] = simulate_replica(model, start, cfg, r);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j)
    pool.emplace_back([&, j] {
      for (std::size_t r = j; r < cfg.replicas; r += jobs) out[r] = simulate_replica(model, start, cfg, r);
    });
  for (auto& th : pool) th.join();
  return out;
}

// ---------------------------------------------------------------------------
// Auxiliary two-block chain

struct AuxGapResult {
  double gap = 0.0;
  bool degenerate = false;
  std::size_t members = 0;
  double detailed_balance_error = 0.0;
  double stationarity_error = 0.0;
};

/// Transition kernel P_i of one block move over the component members.
inline Eigen::MatrixXd block_kernel(const ComponentDescriptor& comp, const TwoBlockSplit& split, int which) {
  BlockResampler sampler(*comp.model, split.region(which));
  const Eigen::Index n = static_cast<Eigen::Index>(comp.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  std::unordered_map<std::vector<StateIndex>, std::vector<std::size_t>, VectorHash> groups;
  for (std::size_t i = 0; i < comp.size(); ++i) groups[sampler.move_key(comp.members[i].states())].push_back(i);
  for (const auto& [key, idx] : groups) {
    if (sampler.law(comp.members[idx.front()].states()).size() != idx.size())
      throw PropertyViolation("block component is not contained in the enumerated component");
    double z = 0.0;
    for (std::size_t i : idx) z += comp.weights[i];
    for (std::size_t i : idx)
      for (std::size_t j : idx)
        P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = comp.weights[j] / z;
  }
  return P;
}

/// Gap of the chain resampling L1 and L2 each at rate 1, by dense eigensolve
/// of the symmetrized generator. Throws PropertyViolation if the assembled
/// chain is not reversible with respect to mu.
inline AuxGapResult auxiliary_chain_gap(const ComponentDescriptor& comp, const TwoBlockSplit& split,
                                        std::size_t dense_cap = kDenseEigenCap) {
  AuxGapResult res;
  res.members = comp.size();
  if (comp.size() <= 1) {
    res.degenerate = true;
    return res;
  }
  if (comp.size() > dense_cap) throw CapExceeded("auxiliary chain eigensolve", static_cast<double>(comp.size()), dense_cap);
  const Eigen::Index n = static_cast<Eigen::Index>(comp.size());
  const Eigen::MatrixXd P = block_kernel(comp, split, 1) + block_kernel(comp, split, 2);
  Eigen::VectorXd mu(n), sq(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    mu(i) = comp.mu(static_cast<std::size_t>(i));
    sq(i) = std::sqrt(mu(i));
  }
  const Eigen::MatrixXd flux = mu.asDiagonal() * P;
  res.detailed_balance_error = (flux - flux.transpose()).cwiseAbs().maxCoeff();
  res.stationarity_error = (mu.transpose() * P - 2.0 * mu.transpose()).cwiseAbs().maxCoeff();
  if (res.detailed_balance_error > 1e-9 || res.stationarity_error > 1e-9)
    throw PropertyViolation("auxiliary chain violates detailed balance");
  Eigen::MatrixXd S = 2.0 * Eigen::MatrixXd::Identity(n, n) - sq.asDiagonal() * P * sq.cwiseInverse().asDiagonal();
  S = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("dense eigensolver failed");
  res.gap = std::max(0.0, es.eigenvalues()(1));
  return res;
}

inline AuxGapResult auxiliary_chain_gap(const Model& model, const Configuration& seed, const TwoBlockSplit& split,
                                        std::size_t cap = kDefaultComponentCap) {
  return auxiliary_chain_gap(enumerate_component(model, seed, cap), split);
}

}  // namespace kcmlab
