#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kcmlab/block.hpp"
#include "kcmlab/model_io.hpp"

namespace kcmlab {

// ---------------------------------------------------------------------------
// Dominating chain Y and the meeting-tail bound

/// Y climbs 0 -> 2R+2 by +1 with probability p_inc and falls to 0 otherwise;
/// 2R+2 is absorbing.
struct YChainParameters {
  double q = 0.5;
  int R = 1;
  double delta = 0.0;

  // 1 - (1 - q^k)^(delta/(4R+3)), evaluated without cancellation.
  double block_hit(int k) const {
    const double e = delta / (4.0 * R + 3.0);
    if (q >= 1.0) return e > 0.0 ? 1.0 : 0.0;
    return -std::expm1(e * std::log1p(-std::pow(q, k)));
  }

  /// (1 - (1 - q^(4R+2))^(delta/(4R+3)))^4
  double p_inc() const { return std::pow(block_hit(4 * R + 2), 4); }

  void check() const {
    if (!(q > 0.0 && q <= 1.0)) throw PreconditionError("q must lie in (0, 1]");
    if (R < 1) throw PreconditionError("R must be at least 1");
    if (delta < 0.0) throw PreconditionError("delta must be non-negative");
  }
};

/// P(Y(t) != 2R+2) from Y(0) = 0, by iterating the transition matrix.
inline double y_chain_tail(int t, const YChainParameters& p) {
  p.check();
  if (t < 0) throw PreconditionError("t must be non-negative");
  const std::size_t top = static_cast<std::size_t>(2 * p.R + 2);
  const double up = p.p_inc();
  std::vector<double> dist(top + 1, 0.0), next(top + 1);
  dist[0] = 1.0;
  for (int s = 0; s < t; ++s) {
    std::fill(next.begin(), next.end(), 0.0);
    next[top] = dist[top];
    for (std::size_t k = 0; k < top; ++k) {
      next[k + 1] += dist[k] * up;
      next[0] += dist[k] * (1.0 - up);
    }
    dist.swap(next);
  }
  double tail = 0.0;
  for (std::size_t k = 0; k < top; ++k) tail += dist[k];
  return tail;
}

struct MeetingTailBound {
  double bound = 0.0;          // e^-T T^(9R) + exp(-T (1 - A^(1/(9R))))
  double A = 0.0;              // 1 - (1 - (1 - q^(4R+2))^(delta/(4R+3)))^(8R+8)
  double A_upper = 0.0;        // (8R+8) exp(-delta q^(4R+2) / (4R+3))
  double one_minus_root = 0.0; // 1 - A^(1/(9R)), kept separately for precision
};

inline MeetingTailBound meeting_tail_bound(double T, const YChainParameters& p) {
  p.check();
  if (!(T >= 2.0)) throw PreconditionError("T must be at least 2");
  const double R = p.R;
  const double hit = p.block_hit(4 * p.R + 2);
  const double b = std::pow(hit, 8.0 * R + 8.0);  // 1 - A
  MeetingTailBound out;
  out.A = 1.0 - b;
  out.one_minus_root = -std::expm1(std::log1p(-b) / (9.0 * R));
  if (b >= 1.0) out.one_minus_root = 1.0;
  out.bound = std::exp(-T + 9.0 * R * std::log(T)) + std::exp(-T * out.one_minus_root);
  out.A_upper = (8.0 * R + 8.0) * std::exp(-p.delta * std::pow(p.q, 4.0 * R + 2.0) / (4.0 * R + 3.0));
  return out;
}

// ---------------------------------------------------------------------------
// Coupling of two alternating two-block chains

struct CouplingState {
  int t = 0;  // double steps taken
  Configuration omega, omega_p;
  int X = 0, Xp = 0;
  bool met = false;
};

struct StepRecord {
  int t = 0;
  int X = 0, Xp = 0;  // before the step
  bool condition_held = false;
  std::optional<SiteId> stitch_center;
  bool met = false;  // after the step
  int event_checks = 0;
  int violations = 0;
  bool stitch_rejected = false;
  bool law_mismatch = false;
};

struct CouplingTrace {
  std::vector<StepRecord> steps;
  std::optional<int> meeting_time;  // in double steps
  std::size_t event_checks = 0;     // double steps where the event E was detected
  std::size_t violations = 0;
  std::size_t stitches = 0;
  std::size_t stitch_rejections = 0;
  std::size_t law_mismatches = 0;
  std::vector<std::string> diagnostics;
};

struct CouplingOptions {
  bool abort_on_violation = true;
  bool record_steps = true;
  bool check_two_step = true;
};

/// Couples two copies of the discrete chain updating L1 at odd and L2 at even
/// steps. While both middle-block closure counts are full the chains are
/// stitched at the rightmost block infected in both L1 proposals and then
/// share the L2 update.
class Coupler {
 public:
  Coupler(const Model& model, TwoBlockSplit split, std::size_t cap = kDefaultComponentCap)
      : model_(model),
        split_(std::move(split)),
        b1_(model, split_.region(1), cap),
        b2_(model, split_.region(2), cap) {}

  const Model& model() const noexcept { return model_; }
  const TwoBlockSplit& split() const noexcept { return split_; }
  BlockResampler& block(int which) { return which == 1 ? b1_ : b2_; }

  int full() const noexcept { return 2 * split_.R + 1; }

  /// |M intersected with the L1 closure|.
  int middle_count(std::span<const StateIndex> st) const {
    const auto cl = b1_.closure(st);
    int x = 0;
    for (std::size_t p = split_.m_begin; p < split_.m_end; ++p) x += cl[p] ? 1 : 0;
    return x;
  }

  CouplingState start(Configuration a, Configuration b) const {
    CouplingState s;
    s.omega = std::move(a);
    s.omega_p = std::move(b);
    s.X = middle_count(s.omega.states());
    s.Xp = middle_count(s.omega_p.states());
    s.met = s.omega == s.omega_p;
    return s;
  }

  /// Event E on a path w0 -> w1 (L1 update) -> w2 (L2 update): some block left
  /// of M has its L1-closure sites infected in w1, and some block right of M
  /// has its L2-closure sites (for w1) infected in w2.
  bool event_E(std::span<const StateIndex> w0, std::span<const StateIndex> w1,
               std::span<const StateIndex> w2) const {
    const std::size_t w = split_.block_width();
    const std::size_t lo = split_.l2_begin, hi = split_.l1_end;  // L1 ∩ L2 = [lo, hi)
    if (hi < lo + w) return false;
    auto covered = [&](std::size_t b, const std::vector<char>& cl, std::span<const StateIndex> st) {
      for (std::size_t p = b; p < b + w; ++p)
        if (cl[p] && !model_.infected(p, st[p])) return false;
      return true;
    };
    bool left = false;
    const auto cl1 = b1_.closure(w0);
    for (std::size_t b = lo; b + w <= split_.m_begin && b + w <= hi; ++b)
      if (covered(b, cl1, w1)) {
        left = true;
        break;
      }
    if (!left) return false;
    const auto cl2 = b2_.closure(w1);
    for (std::size_t b = split_.m_end; b + w <= hi; ++b)
      if (covered(b, cl2, w2)) return true;
    return false;
  }

  /// One double step 2t -> 2t+2.
  StepRecord step(CouplingState& s, CounterRng& rng, const CouplingOptions& opt = {}) {
    StepRecord rec;
    rec.t = s.t;
    rec.X = s.X;
    rec.Xp = s.Xp;
    const std::vector<StateIndex> a0(s.omega.states().begin(), s.omega.states().end());
    const std::vector<StateIndex> b0(s.omega_p.states().begin(), s.omega_p.states().end());
    std::vector<StateIndex> a1 = a0, b1 = b0;

    if (s.met || a0 == b0) {
      b1_.resample(a1, rng);
      std::vector<StateIndex> a2 = a1;
      b2_.resample(a2, rng);
      check_path(a0, a1, a2, rec, opt);
      s.omega = Configuration(a2);
      s.omega_p = Configuration(std::move(a2));
    } else if (s.X == full() && s.Xp == full()) {
      rec.condition_held = true;
      b1_.resample(a1, rng);
      b1_.resample(b1, rng);
      std::optional<std::size_t> center;
      const std::size_t R = static_cast<std::size_t>(split_.R);
      for (std::size_t c = split_.l1_end - 1 - R + 1; c-- > split_.l2_begin + R;) {
        bool ok = true;
        for (std::size_t p = c - R; p <= c + R && ok; ++p)
          ok = model_.infected(p, a1[p]) && model_.infected(p, b1[p]);
        if (ok) {
          center = c;
          break;
        }
      }
      bool shared_l2 = false;
      if (center) {
        rec.stitch_center = model_.site_at(*center);
        std::vector<StateIndex> stitched = b0;
        for (std::size_t p = 0; p < split_.l1_end; ++p) stitched[p] = p <= *center ? a1[p] : b1[p];
        if (b1_.key(stitched) == b1_.key(b0)) {
          b1 = std::move(stitched);
          if (b2_.key(a1) == b2_.key(b1))
            shared_l2 = true;
          else
            rec.law_mismatch = true;
        } else {
          rec.stitch_rejected = true;
        }
      }
      std::vector<StateIndex> a2 = a1, b2 = b1;
      if (shared_l2) {
        b2_.resample(a2, rng);
        b2 = a2;
      } else {
        b2_.resample(a2, rng);
        b2_.resample(b2, rng);
      }
      check_path(a0, a1, a2, rec, opt);
      check_path(b0, b1, b2, rec, opt);
      s.omega = Configuration(std::move(a2));
      s.omega_p = Configuration(std::move(b2));
    } else {
      b1_.resample(a1, rng);
      b1_.resample(b1, rng);
      std::vector<StateIndex> a2 = a1, b2 = b1;
      b2_.resample(a2, rng);
      b2_.resample(b2, rng);
      check_path(a0, a1, a2, rec, opt);
      check_path(b0, b1, b2, rec, opt);
      s.omega = Configuration(std::move(a2));
      s.omega_p = Configuration(std::move(b2));
    }
    ++s.t;
    s.X = middle_count(s.omega.states());
    s.Xp = middle_count(s.omega_p.states());
    s.met = s.met || s.omega == s.omega_p;
    rec.met = s.met;
    return rec;
  }

 private:
  void check_path(const std::vector<StateIndex>& w0, const std::vector<StateIndex>& w1,
                  const std::vector<StateIndex>& w2, StepRecord& rec, const CouplingOptions& opt) const {
    if (!opt.check_two_step || !event_E(w0, w1, w2)) return;
    ++rec.event_checks;
    const int before = middle_count(w0), after = middle_count(w2);
    if (after >= std::min(before + 1, full())) return;
    ++rec.violations;
    if (opt.abort_on_violation) {
      std::ostringstream os;
      os << "two-step monotonicity failed: X " << before << " -> " << after << "\n"
         << "w0 " << configuration_to_json(model_, Configuration(w0)).dump() << "\n"
         << "w1 " << configuration_to_json(model_, Configuration(w1)).dump() << "\n"
         << "w2 " << configuration_to_json(model_, Configuration(w2)).dump();
      throw PropertyViolation(os.str());
    }
  }

  Model model_;
  TwoBlockSplit split_;
  BlockResampler b1_, b2_;
};

inline StepRecord coupled_step(Coupler& coupler, CouplingState& state, std::uint64_t seed,
                               const CouplingOptions& opt = {}) {
  CounterRng rng(seed, static_cast<std::uint64_t>(state.t));
  return coupler.step(state, rng, opt);
}

/// Runs the coupling until the chains meet or max_steps double steps pass.
inline CouplingTrace run_coupling(Coupler& coupler, const Configuration& a, const Configuration& b,
                                  std::uint64_t seed, int max_steps, const CouplingOptions& opt = {}) {
  CouplingTrace trace;
  CouplingState s = coupler.start(a, b);
  if (s.met) {
    trace.meeting_time = 0;
    return trace;
  }
  CounterRng rng(seed);
  for (int step = 0; step < max_steps && !s.met; ++step) {
    StepRecord rec = coupler.step(s, rng, opt);
    trace.event_checks += static_cast<std::size_t>(rec.event_checks);
    trace.violations += static_cast<std::size_t>(rec.violations);
    trace.stitches += rec.stitch_center && !rec.stitch_rejected ? 1 : 0;
    trace.stitch_rejections += rec.stitch_rejected ? 1 : 0;
    trace.law_mismatches += rec.law_mismatch ? 1 : 0;
    if (rec.met) trace.meeting_time = s.t;
    if (opt.record_steps) trace.steps.push_back(rec);
  }
  return trace;
}

inline CouplingTrace run_coupling(const Model& model, const TwoBlockSplit& split, const Configuration& a,
                                  const Configuration& b, std::uint64_t seed, int max_steps,
                                  const CouplingOptions& opt = {}) {
  require_valid(model);
  if (split.delta < 2 * split.R + 1) throw PreconditionError("coupling needs a coupling-mode split");
  Coupler coupler(model, split);
  return run_coupling(coupler, a, b, seed, max_steps, opt);
}

/// Member of the component drawn from mu.
inline Configuration sample_member(const ComponentDescriptor& comp, CounterRng& rng) {
  const double u = rng.uniform() * comp.normalizer;
  double acc = 0.0;
  for (std::size_t i = 0; i < comp.size(); ++i) {
    acc += comp.weights[i];
    if (u < acc) return comp.members[i];
  }
  return comp.members.back();
}

// ---------------------------------------------------------------------------
// Warm-up coupling

struct EasyRoundRecord {
  int round = 0;
  // acceptance masses of the forced updates, chain 0 and chain 1
  double accept_l1[2] = {0, 0};
  double accept_l2[2] = {0, 0};
  std::size_t boundary_for_l1[2] = {0, 0};  // infected sites of L2\L1 next to L1
  std::size_t boundary_for_l2[2] = {0, 0};  // infected sites of L1\L2 next to L2
};

struct EasyCouplingTrace {
  std::vector<EasyRoundRecord> rounds;
  std::optional<int> meeting_step;  // single block updates
  std::size_t violations = 0;
  double log_rate = 0.0;  // log of 2^(-2(R+2)) times the forced-update masses
  std::vector<std::string> diagnostics;
};

/// Alternately updates L1 and L2 in each chain, conditioning each update on
/// the closure sites next to the other block being infected, for R+1 rounds;
/// then gives both chains the same L1 and L2 updates. Asserts that the
/// infected boundary sets never shrink and that the sites of L2\L1 next to L1
/// are all infected after the rounds.
inline EasyCouplingTrace easy_coupling_run(Coupler& coupler, const Configuration& a, const Configuration& b,
                                           std::uint64_t seed, bool abort_on_violation = true) {
  const Model& m = coupler.model();
  const TwoBlockSplit& sp = coupler.split();
  const std::size_t R = static_cast<std::size_t>(sp.R);
  std::vector<std::size_t> adj1, adj2;  // L1\L2 next to L2; L2\L1 next to L1
  for (std::size_t p = sp.l2_begin >= R ? sp.l2_begin - R : 0; p < sp.l2_begin; ++p) adj1.push_back(p);
  for (std::size_t p = sp.l1_end; p < std::min(sp.n, sp.l1_end + R); ++p) adj2.push_back(p);

  EasyCouplingTrace trace;
  CounterRng rng(seed);
  std::vector<StateIndex> chain[2] = {{a.states().begin(), a.states().end()}, {b.states().begin(), b.states().end()}};

  auto infected_set = [&](const std::vector<StateIndex>& st, const std::vector<std::size_t>& sites) {
    std::vector<std::size_t> out;
    for (std::size_t p : sites)
      if (m.infected(p, st[p])) out.push_back(p);
    return out;
  };
  auto forcing = [&](const std::vector<std::size_t>& sites) {
    return [&m, &sites](const BlockLaw& law, std::size_t i) {
      auto asg = law.assignment(i);
      for (std::size_t k = 0; k < law.positions.size(); ++k)
        if (std::find(sites.begin(), sites.end(), law.positions[k]) != sites.end() &&
            !m.infected(law.positions[k], asg[k]))
          return false;
      return true;
    };
  };
  auto fail = [&](const std::string& what) {
    ++trace.violations;
    trace.diagnostics.push_back(what);
    if (abort_on_violation) throw PropertyViolation("warm-up coupling: " + what);
  };
  auto subset = [](const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
    return std::includes(y.begin(), y.end(), x.begin(), x.end());
  };

  const auto force1 = forcing(adj1);
  const auto force2 = forcing(adj2);
  std::vector<std::size_t> prev1[2], prev2[2];
  for (int c = 0; c < 2; ++c) {
    prev1[c] = infected_set(chain[c], adj2);
    prev2[c] = infected_set(chain[c], adj1);
  }
  trace.log_rate = -2.0 * static_cast<double>(R + 2) * std::log(2.0);
  for (int r = 1; r <= static_cast<int>(R) + 1; ++r) {
    EasyRoundRecord rec;
    rec.round = r;
    for (int c = 0; c < 2; ++c) {
      rec.accept_l1[c] = coupler.block(1).resample_conditioned(chain[c], rng, force1);
      rec.accept_l2[c] = coupler.block(2).resample_conditioned(chain[c], rng, force2);
      trace.log_rate += std::log(rec.accept_l1[c]) + std::log(rec.accept_l2[c]);
      auto s1 = infected_set(chain[c], adj2);
      auto s2 = infected_set(chain[c], adj1);
      if (!subset(prev1[c], s1)) fail("boundary of L1 lost an infection in round " + std::to_string(r));
      if (!subset(prev2[c], s2)) fail("boundary of L2 lost an infection in round " + std::to_string(r));
      rec.boundary_for_l1[c] = s1.size();
      rec.boundary_for_l2[c] = s2.size();
      prev1[c] = std::move(s1);
      prev2[c] = std::move(s2);
    }
    trace.rounds.push_back(rec);
  }
  for (int c = 0; c < 2; ++c)
    if (prev1[c].size() != adj2.size()) fail("sites of L2\\L1 next to L1 not all infected after R+1 rounds");

  // Shared final updates.
  if (coupler.block(1).key(chain[0]) != coupler.block(1).key(chain[1])) {
    fail("L1 laws differ before the shared update");
    return trace;
  }
  const double acc = coupler.block(1).resample_conditioned(chain[0], rng, force1);
  trace.log_rate += std::log(acc);
  for (std::size_t p = 0; p < sp.l1_end; ++p) chain[1][p] = chain[0][p];
  if (coupler.block(2).key(chain[0]) != coupler.block(2).key(chain[1])) {
    fail("L2 laws differ before the shared update");
    return trace;
  }
  coupler.block(2).resample(chain[0], rng);
  chain[1] = chain[0];
  trace.meeting_step = 2 * (static_cast<int>(R) + 2);
  return trace;
}

}  // namespace kcmlab
