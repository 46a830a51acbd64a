#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "kcmlab/closure.hpp"
#include "kcmlab/component.hpp"
#include "kcmlab/rng.hpp"

namespace kcmlab {

/// L1 = first ell volume sites, L2 = the last |L| - ell + delta, and the
/// middle block M = ell - floor(delta/2) + {-R..R} (1-based positions).
/// Position ranges are half-open and 0-based.
struct TwoBlockSplit {
  int ell = 0;
  int delta = 0;
  int R = 1;
  std::size_t n = 0;
  std::vector<SiteId> L1, L2, M;
  std::size_t l1_end = 0;    // L1 = [0, l1_end)
  std::size_t l2_begin = 0;  // L2 = [l2_begin, n)
  std::size_t m_begin = 0, m_end = 0;

  bool in_L1(std::size_t p) const noexcept { return p < l1_end; }
  bool in_L2(std::size_t p) const noexcept { return p >= l2_begin; }
  bool in_M(std::size_t p) const noexcept { return p >= m_begin && p < m_end; }
  std::size_t block_width() const noexcept { return static_cast<std::size_t>(2 * R + 1); }

  std::vector<char> region(int which) const {
    std::vector<char> r(n, 0);
    for (std::size_t p = 0; p < n; ++p) r[p] = which == 1 ? in_L1(p) : in_L2(p);
    return r;
  }
};

enum class SplitMode { general, coupling };

inline TwoBlockSplit make_split(const Model& model, int ell, int delta, SplitMode mode = SplitMode::general) {
  const int n = static_cast<int>(model.size());
  if (ell < 1 || ell > n) throw PreconditionError("ell must lie in [1, |L|]");
  if (delta < 0 || delta > ell) throw PreconditionError("delta must lie in [0, ell]");
  TwoBlockSplit s;
  s.ell = ell;
  s.delta = delta;
  s.R = model.range();
  s.n = model.size();
  s.l1_end = static_cast<std::size_t>(ell);
  s.l2_begin = static_cast<std::size_t>(ell - delta);
  const int center = ell - delta / 2 - 1;  // 0-based
  const int mb = std::max(0, center - s.R), me = std::min(n, center + s.R + 1);
  s.m_begin = static_cast<std::size_t>(mb);
  s.m_end = static_cast<std::size_t>(std::max(mb, me));
  if (mode == SplitMode::coupling) {
    if (delta < 2 * s.R + 1) throw PreconditionError("coupling needs delta >= 2R+1 so that a block fits in L1 and L2");
    if (center - s.R < ell - delta || center + s.R > ell - 1)
      throw PreconditionError("middle block is not contained in L1 and L2");
  }
  for (std::size_t p = 0; p < s.n; ++p) {
    if (s.in_L1(p)) s.L1.push_back(model.site_at(p));
    if (s.in_L2(p)) s.L2.push_back(model.site_at(p));
    if (s.in_M(p)) s.M.push_back(model.site_at(p));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Block resampling

struct VectorHash {
  std::size_t operator()(const std::vector<StateIndex>& v) const noexcept {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (StateIndex s : v) h = (h ^ static_cast<std::size_t>(s + 2)) * 0x100000001b3ULL;
    return h;
  }
};

/// pi on a region conditioned on the irreducible component of the current
/// state, the closure being taken inside the region with everything else as a
/// frozen boundary. Only the closure positions vary.
struct BlockLaw {
  std::vector<std::size_t> positions;
  std::vector<StateIndex> assignments;  // members x positions, row-major
  std::vector<double> weights;
  std::vector<double> cumulative;
  double total = 0.0;

  std::size_t size() const noexcept { return weights.size(); }
  std::span<const StateIndex> assignment(std::size_t i) const {
    return {assignments.data() + i * positions.size(), positions.size()};
  }
  std::size_t sample(CounterRng& rng) const {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), size() - 1);
  }
  void apply(std::size_t i, std::span<StateIndex> states) const {
    auto a = assignment(i);
    for (std::size_t k = 0; k < positions.size(); ++k) states[positions[k]] = a[k];
  }
};

/// Samples the region update, memoizing the law per component key. Safe to
/// share across threads.
class BlockResampler {
 public:
  BlockResampler(const Model& model, std::vector<char> region, std::size_t cap = kDefaultComponentCap)
      : model_(std::make_shared<const Model>(model)), region_(std::move(region)), cap_(cap) {
    const Model& m = *model_;
    near_.assign(m.size(), 0);
    const int R = m.range();
    for (std::size_t p = 0; p < m.size(); ++p)
      for (std::size_t r = 0; r < m.size() && !near_[p]; ++r)
        near_[p] = region_[r] && std::abs(m.site_at(p) - m.site_at(r)) <= R;
  }

  const Model& model() const noexcept { return *model_; }
  const std::vector<char>& region() const noexcept { return region_; }

  /// Region closure of the given state.
  std::vector<char> closure(std::span<const StateIndex> states) const {
    ClosureEngine engine(*model_);
    return engine.run(states, region_);
  }

  /// Identifies the block law: states off the region within distance R of
  /// it, the region closure, and the frozen states inside the region.
  std::vector<StateIndex> key(std::span<const StateIndex> states) const {
    const auto cl = closure(states);
    std::vector<StateIndex> k(states.begin(), states.end());
    for (std::size_t p = 0; p < k.size(); ++p) {
      if (!near_[p]) k[p] = -2;
      else if (region_[p] && cl[p]) k[p] = -1;
    }
    return k;
  }

  /// Finer than key(): every state off the region is kept, so equal move
  /// keys mean one block move connects the two configurations.
  std::vector<StateIndex> move_key(std::span<const StateIndex> states) const {
    const auto cl = closure(states);
    std::vector<StateIndex> k(states.begin(), states.end());
    for (std::size_t p = 0; p < k.size(); ++p)
      if (region_[p] && cl[p]) k[p] = -1;
    return k;
  }

  const BlockLaw& law(std::span<const StateIndex> states) {
    auto k = key(states);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (auto it = cache_.find(k); it != cache_.end()) return *it->second;
    }
    auto built = std::make_unique<BlockLaw>(build(states));
    std::lock_guard<std::mutex> lock(mutex_);
    auto [it, inserted] = cache_.emplace(std::move(k), std::move(built));
    return *it->second;
  }

  void resample(std::span<StateIndex> states, CounterRng& rng) {
    const BlockLaw& l = law(states);
    l.apply(l.sample(rng), states);
  }

  /// Resamples conditioned on `accept` holding for the new assignment.
  /// Returns the law's mass of the accepted event (0 leaves states unchanged).
  double resample_conditioned(std::span<StateIndex> states, CounterRng& rng,
                              const std::function<bool(const BlockLaw&, std::size_t)>& accept) {
    const BlockLaw& l = law(states);
    std::vector<std::size_t> ok;
    std::vector<double> cum;
    double mass = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (!accept(l, i)) continue;
      mass += l.weights[i];
      ok.push_back(i);
      cum.push_back(mass);
    }
    if (ok.empty()) return 0.0;
    const double u = rng.uniform() * mass;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    const std::size_t pick = ok[std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), ok.size() - 1)];
    l.apply(pick, states);
    return mass / l.total;
  }

  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return cache_.size();
  }

 private:
  BlockLaw build(std::span<const StateIndex> states) const {
    const Model& m = *model_;
    ClosureEngine engine(m);
    const std::vector<char> target = engine.run(states, region_);
    BlockLaw law;
    for (std::size_t p = 0; p < m.size(); ++p)
      if (region_[p] && target[p]) law.positions.push_back(p);
    const double card = detail::product_cardinality(m, law.positions);
    if (card > static_cast<double>(cap_)) throw CapExceeded("block component enumeration", card, cap_);
    const auto total = static_cast<std::size_t>(card);
    std::vector<StateIndex> st(states.begin(), states.end());
    for (std::size_t p : law.positions) st[p] = 0;
    for (std::size_t code = 0; code < total; ++code) {
      if (code > 0) {
        for (std::size_t p : law.positions) {
          if (static_cast<std::size_t>(++st[p]) < m.num_states(p)) break;
          st[p] = 0;
        }
      }
      if (engine.run(st, region_) != target) continue;
      double w = 1.0;
      for (std::size_t p : law.positions) {
        w *= m.weight(p, st[p]);
        law.assignments.push_back(st[p]);
      }
      law.weights.push_back(w);
      law.total += w;
      law.cumulative.push_back(law.total);
    }
    return law;
  }

  std::shared_ptr<const Model> model_;
  std::vector<char> region_;
  std::vector<char> near_;  // region plus sites within R of it
  std::size_t cap_;
  mutable std::mutex mutex_;
  std::unordered_map<std::vector<StateIndex>, std::unique_ptr<BlockLaw>, VectorHash> cache_;
};

/// One update of block `which` (1 or 2) from its conditioned law.
inline Configuration two_block_resample(const Model& model, const Configuration& config, int which,
                                        const TwoBlockSplit& split, std::uint64_t seed,
                                        std::size_t cap = kDefaultComponentCap) {
  if (which != 1 && which != 2) throw PreconditionError("block must be 1 or 2");
  require_config(model, config);
  BlockResampler sampler(model, split.region(which), cap);
  CounterRng rng(seed);
  Configuration out = config;
  sampler.resample(out.mutable_states(), rng);
  return out;
}

}  // namespace kcmlab
