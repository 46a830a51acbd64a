#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "kcmlab/component.hpp"

namespace kcmlab {

inline constexpr std::size_t kDenseEigenCap = 4096;
inline constexpr double kEigenTolerance = 1e-10;

/// A real function on the members of a component, in member order.
struct ObservableFunction {
  std::vector<double> values;
};

namespace detail {

inline void require_domain(const ComponentDescriptor& comp, const ObservableFunction& f) {
  if (f.values.size() != comp.size()) throw PreconditionError("observable domain does not match component");
}

// Per-member list of (neighbour index, rate) for the KCM generator: at a site
// with satisfied constraint the state is resampled from pi_x.
struct Transition {
  std::size_t from, to;
  double rate;  // pi_x(target state)
};

inline std::vector<Transition> kcm_transitions(const ComponentDescriptor& comp) {
  const Model& m = *comp.model;
  std::vector<Transition> out;
  std::vector<StateIndex> st;
  for (std::size_t i = 0; i < comp.size(); ++i) {
    st.assign(comp.members[i].states().begin(), comp.members[i].states().end());
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (!constraint_at(m, st, p)) continue;
      const StateIndex keep = st[p];
      for (std::size_t s = 0; s < m.num_states(p); ++s) {
        if (static_cast<StateIndex>(s) == keep) continue;
        st[p] = static_cast<StateIndex>(s);
        auto j = comp.find(st);
        if (!j)
          throw PropertyViolation("allowed move leaves the enumerated component at site " +
                                  std::to_string(m.site_at(p)));
        out.push_back({i, *j, m.weight(p, st[p])});
      }
      st[p] = keep;
    }
  }
  return out;
}

}  // namespace detail

inline double expectation(const ComponentDescriptor& comp, const ObservableFunction& f) {
  detail::require_domain(comp, f);
  double e = 0.0;
  for (std::size_t i = 0; i < comp.size(); ++i) e += comp.mu(i) * f.values[i];
  return e;
}

inline double variance(const ComponentDescriptor& comp, const ObservableFunction& f) {
  const double mean = expectation(comp, f);
  double v = 0.0;
  for (std::size_t i = 0; i < comp.size(); ++i) v += comp.mu(i) * (f.values[i] - mean) * (f.values[i] - mean);
  return v;
}

/// Variance of f under mu_X = mu(. | eta on volume \ X).
inline double var_X(const ComponentDescriptor& comp, const ObservableFunction& f, const std::vector<SiteId>& X,
                    const std::map<SiteId, StateIndex>& outside) {
  detail::require_domain(comp, f);
  const auto cd = conditional_measure(comp, X, outside);
  double mean = 0.0;
  for (std::size_t k = 0; k < cd.support.size(); ++k) mean += cd.probabilities[k] * f.values[cd.member_indices[k]];
  double var = 0.0;
  for (std::size_t k = 0; k < cd.support.size(); ++k) {
    const double d = f.values[cd.member_indices[k]] - mean;
    var += cd.probabilities[k] * d * d;
  }
  return var;
}

/// D(f) = sum_x mu(c_x Var_x(f)). Where the constraint holds mu_x is pi_x, so
/// Var_x is the pi_x-variance over the states of x with the rest fixed.
inline double dirichlet_form(const ComponentDescriptor& comp, const ObservableFunction& f) {
  detail::require_domain(comp, f);
  const Model& m = *comp.model;
  double total = 0.0;
  std::vector<StateIndex> st;
  for (std::size_t i = 0; i < comp.size(); ++i) {
    st.assign(comp.members[i].states().begin(), comp.members[i].states().end());
    double local = 0.0;
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (!constraint_at(m, st, p)) continue;
      const StateIndex keep = st[p];
      double mean = 0.0;
      std::vector<double> vals(m.num_states(p));
      for (std::size_t s = 0; s < m.num_states(p); ++s) {
        st[p] = static_cast<StateIndex>(s);
        auto j = comp.find(st);
        if (!j) throw PropertyViolation("allowed move leaves the enumerated component");
        vals[s] = f.values[*j];
        mean += m.weight(p, static_cast<StateIndex>(s)) * vals[s];
      }
      st[p] = keep;
      double var = 0.0;
      for (std::size_t s = 0; s < vals.size(); ++s)
        var += m.weight(p, static_cast<StateIndex>(s)) * (vals[s] - mean) * (vals[s] - mean);
      local += var;
    }
    total += comp.mu(i) * local;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Spectral gap

struct GapOptions {
  std::size_t dense_cap = kDenseEigenCap;
  double tolerance = kEigenTolerance;
  std::size_t max_iterations = 5000;
};

struct GapResult {
  double gap = 0.0;
  std::optional<double> t_rel;  // absent for a degenerate (single member) component
  bool degenerate = false;
  std::size_t members = 0;
  std::string method;  // "dense", "shift-invert" or "trivial"
  double zero_eigenvalue = 0.0;
  double third_eigenvalue = std::numeric_limits<double>::quiet_NaN();
};

/// Symmetrized negative generator sqrt(mu) (-L) sqrt(mu)^-1, which for a
/// resampling move between a and b has off-diagonal -sqrt(pi(a) pi(b)).
inline Eigen::MatrixXd symmetrized_generator_dense(const ComponentDescriptor& comp) {
  const auto trans = detail::kcm_transitions(comp);
  const Eigen::Index n = static_cast<Eigen::Index>(comp.size());
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  for (const auto& t : trans) {
    S(t.from, t.from) += t.rate;
    S(t.from, t.to) -= t.rate * std::sqrt(comp.mu(t.from) / comp.mu(t.to));
  }
  return 0.5 * (S + S.transpose());
}

inline Eigen::SparseMatrix<double> symmetrized_generator_sparse(const ComponentDescriptor& comp) {
  const auto trans = detail::kcm_transitions(comp);
  const Eigen::Index n = static_cast<Eigen::Index>(comp.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(trans.size() * 2);
  for (const auto& t : trans) {
    trip.emplace_back(static_cast<Eigen::Index>(t.from), static_cast<Eigen::Index>(t.from), t.rate);
    const double off = -t.rate * std::sqrt(comp.mu(t.from) / comp.mu(t.to));
    trip.emplace_back(static_cast<Eigen::Index>(t.from), static_cast<Eigen::Index>(t.to), 0.5 * off);
    trip.emplace_back(static_cast<Eigen::Index>(t.to), static_cast<Eigen::Index>(t.from), 0.5 * off);
  }
  Eigen::SparseMatrix<double> S(n, n);
  S.setFromTriplets(trip.begin(), trip.end());
  return S;
}

namespace detail {

// Smallest eigenvalue of a PSD sparse matrix on the orthogonal complement of
// a known null vector: subspace iteration with (S + shift I)^-1 plus
// Rayleigh-Ritz, deflating the null vector each sweep.
inline double shift_invert_second_eigenvalue(const Eigen::SparseMatrix<double>& S, const Eigen::VectorXd& null_vec,
                                             double tolerance, std::size_t max_iterations) {
  const Eigen::Index n = S.rows();
  const Eigen::Index block = std::min<Eigen::Index>(6, n - 1);
  const double shift = 1e-3;
  Eigen::SparseMatrix<double> A = S;
  for (Eigen::Index i = 0; i < n; ++i) A.coeffRef(i, i) += shift;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
  if (solver.info() != Eigen::Success) throw Error("sparse factorization failed");

  const Eigen::VectorXd v0 = null_vec.normalized();
  Eigen::MatrixXd V(n, block);
  for (Eigen::Index j = 0; j < block; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      V(i, j) = std::sin(0.7 * static_cast<double>(i + 1) * static_cast<double>(j + 1) + 0.3 * static_cast<double>(j));
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iterations; ++it) {
    V -= v0 * (v0.transpose() * V);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(V);
    V = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
    Eigen::MatrixXd W = solver.solve(V);
    W -= v0 * (v0.transpose() * W);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr2(W);
    Eigen::MatrixXd Q = qr2.householderQ() * Eigen::MatrixXd::Identity(n, block);
    Eigen::MatrixXd H = Q.transpose() * (S * Q);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
    V = Q * es.eigenvectors();
    const double lambda = es.eigenvalues()(0);
    const Eigen::VectorXd r = S * V.col(0) - lambda * V.col(0);
    if (std::abs(lambda - previous) <= tolerance * std::max(1.0, std::abs(lambda)) && r.norm() <= 10 * tolerance)
      return lambda;
    previous = lambda;
  }
  throw Error("shift-invert eigensolver did not converge");
}

}  // namespace detail

/// Smallest nonzero eigenvalue of the negative generator on the component.
inline GapResult spectral_gap_exact(const ComponentDescriptor& comp, const GapOptions& opt = {}) {
  GapResult res;
  res.members = comp.size();
  if (comp.size() <= 1) {
    res.degenerate = true;
    res.method = "trivial";
    return res;
  }
  if (comp.size() <= opt.dense_cap) {
    const Eigen::MatrixXd S = symmetrized_generator_dense(comp);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error("dense eigensolver failed");
    res.zero_eigenvalue = es.eigenvalues()(0);
    res.gap = es.eigenvalues()(1);
    if (comp.size() > 2) res.third_eigenvalue = es.eigenvalues()(2);
    res.method = "dense";
  } else {
    const auto S = symmetrized_generator_sparse(comp);
    Eigen::VectorXd v0(static_cast<Eigen::Index>(comp.size()));
    for (std::size_t i = 0; i < comp.size(); ++i) v0(static_cast<Eigen::Index>(i)) = std::sqrt(comp.mu(i));
    res.gap = detail::shift_invert_second_eigenvalue(S, v0, opt.tolerance, opt.max_iterations);
    res.zero_eigenvalue = (S * v0).norm();
    res.method = "shift-invert";
  }
  res.gap = std::max(res.gap, 0.0);
  if (res.gap > 0.0) res.t_rel = 1.0 / res.gap;
  return res;
}

}  // namespace kcmlab
