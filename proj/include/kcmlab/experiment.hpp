#pragma once

#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "kcmlab/bounds.hpp"
#include "kcmlab/coupling.hpp"
#include "kcmlab/dynamics.hpp"
#include "kcmlab/model_io.hpp"
#include "kcmlab/random_model.hpp"
#include "kcmlab/testfn.hpp"
#include "kcmlab/zoo.hpp"

#ifndef KCMLAB_VERSION
#define KCMLAB_VERSION "0.1.0"
#endif

namespace kcmlab {

// ---------------------------------------------------------------------------
// CSV and hashing

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

using CsvRow = std::vector<std::string>;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += csv_field(r[i]);
      }
      out += "\r\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& data) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << data;
}

inline std::string str(std::size_t v) { return std::to_string(v); }
inline std::string str(int v) { return std::to_string(v); }
inline std::string str(bool v) { return v ? "1" : "0"; }

// ---------------------------------------------------------------------------
// Experiment specification

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"gap-sweep", "bound-check", "coupling-sweep", "oracle-suite",
                                          "testfn",    "two-block"};
  return k;
}

/// Grids are lists; "L" is the zoo size parameter n.
struct ExperimentSpec {
  std::string kind;
  Json model;  // {"zoo": name, "boundary": ...} | {"file": path} | {"inline": model document}
  Json grid = Json::object();
  Json seeds = Json::object();  // {"master": u64, ...}
  Json options = Json::object();
  std::string output = "out";
  std::size_t jobs = 0;  // 0: KCMLAB_JOBS or 1

  Json to_json() const {
    Json j{{"kind", kind}, {"grid", grid}, {"seeds", seeds}, {"options", options}, {"output", output}};
    if (!model.is_null()) j["model"] = model;
    return j;
  }

  static ExperimentSpec from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("experiment spec must be a JSON object");
    ExperimentSpec s;
    s.kind = detail::require_field(j, "kind", "spec").get<std::string>();
    if (std::find(experiment_kinds().begin(), experiment_kinds().end(), s.kind) == experiment_kinds().end())
      throw ValidationError("unknown experiment kind '" + s.kind + "'");
    if (j.contains("model")) s.model = j.at("model");
    if (j.contains("grid")) s.grid = j.at("grid");
    if (j.contains("options")) s.options = j.at("options");
    s.seeds = detail::require_field(j, "seeds", "spec");
    if (!s.seeds.is_object() || !s.seeds.contains("master") || !s.seeds.at("master").is_number_unsigned())
      throw ValidationError("spec.seeds.master must be an unsigned integer (no implicit entropy)");
    if (j.contains("output")) s.output = j.at("output").get<std::string>();
    if (j.contains("jobs")) s.jobs = j.at("jobs").get<std::size_t>();
    if (!s.grid.is_object()) throw ValidationError("spec.grid must be an object");
    for (const auto& [key, val] : s.grid.items())
      if (!val.is_array() || val.empty()) throw ValidationError("grid '" + key + "' must be a nonempty list");
    return s;
  }

  std::uint64_t master_seed() const { return seeds.at("master").get<std::uint64_t>(); }

  template <class T>
  std::vector<T> grid_or(const char* name, std::vector<T> fallback) const {
    if (!grid.contains(name)) return fallback;
    return grid.at(name).get<std::vector<T>>();
  }

  template <class T>
  T option_or(const char* name, T fallback) const {
    if (!options.contains(name)) return fallback;
    return options.at(name).get<T>();
  }
};

inline std::size_t resolve_jobs(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("KCMLAB_JOBS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && v > 0) return v;
  }
  return 1;
}

/// Inlines a file model so the spec stands on its own.
inline Json resolve_model_source(const Json& src) {
  if (src.is_object() && src.contains("file")) {
    const Model m = load_model(src.at("file").get<std::string>());
    return Json{{"inline", model_to_json(m)}};
  }
  return src;
}

inline Model model_from_source(const Json& src, int n, double q) {
  if (src.is_object() && src.contains("inline")) return parse_model(src.at("inline").dump());
  if (src.is_object() && src.contains("file")) return load_model(src.at("file").get<std::string>());
  std::string name = "east";
  ZooParams zp;
  zp.n = n;
  zp.q = q;
  if (src.is_object()) {
    if (src.contains("zoo")) name = src.at("zoo").get<std::string>();
    if (src.contains("boundary")) zp.boundary = src.at("boundary").get<std::string>();
  }
  return build_zoo_model(name, zp);
}

inline std::string model_label(const Json& src) {
  if (src.is_object() && src.contains("zoo")) return src.at("zoo").get<std::string>();
  if (src.is_object() && src.contains("inline")) return "inline";
  return src.is_null() ? "east" : "model";
}

inline std::uint64_t cell_seed(std::uint64_t master, std::size_t cell, std::uint64_t salt = 0) {
  return splitmix64(splitmix64(master ^ 0x6b636d6c6162ULL) + cell * 0x9e3779b97f4a7c15ULL + salt);
}

// ---------------------------------------------------------------------------
// Cell execution

struct CellOutput {
  std::vector<CsvRow> rows;
  std::vector<CsvRow> extra;
  Json summary = Json::object();
};

/// Runs cells [0, count) on up to `jobs` threads; results keep cell order.
/// Returns the outputs and the first failing cell (if any) with its error.
template <class Fn>
std::pair<std::vector<std::optional<CellOutput>>, std::optional<std::pair<std::size_t, std::exception_ptr>>>
run_cells(std::size_t count, std::size_t jobs, Fn&& fn) {
  std::vector<std::optional<CellOutput>> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < count; ++i)
    if (errors[i]) return {std::move(out), std::make_pair(i, errors[i])};
  return {std::move(out), std::nullopt};
}

[[noreturn]] inline void rethrow_in_cell(std::exception_ptr e, const std::string& where) {
  try {
    std::rethrow_exception(e);
  } catch (const CapExceeded& x) {
    throw CapExceeded(where + ": " + x.what(), x.cardinality(), x.cap());
  } catch (const ValidationError& x) {
    throw ValidationError(where + ": " + x.what());
  } catch (const PreconditionError& x) {
    throw PreconditionError(where + ": " + x.what());
  } catch (const PropertyViolation& x) {
    throw PropertyViolation(where + ": " + x.what());
  } catch (const std::exception& x) {
    throw Error(where + ": " + x.what());
  }
}

// ---------------------------------------------------------------------------
// Oracle checks (one random instance)

struct OracleOutcome {
  std::size_t sites = 0;
  int R = 1;
  double q = 1.0;
  std::size_t members = 0;
  bool closure_ok = false;
  bool component_ok = false;
  bool domination_ok = false;
  double min_conditional = 1.0;
  std::size_t isolation_checks = 0;
  bool isolation_ok = true;
  bool gap_compared = false;  // both components have at least two members
  bool simplify_ok = false;
  double trel = 0.0, trel_simplified = 0.0;
  bool idempotent = false;
};

namespace detail {

// Runs check_isolation on every fully infected block of every member with
// full closure. Returns (checks, all passed).
inline std::pair<std::size_t, bool> isolation_sweep(const Model& m, const ComponentDescriptor& comp) {
  std::size_t checks = 0;
  bool ok = true;
  if (comp.closure_set.size() != m.size()) return {0, true};
  const int w = 2 * m.range() + 1;
  for (const auto& c : comp.members) {
    for (std::size_t p = 0; p + static_cast<std::size_t>(w) <= m.size(); ++p) {
      const SiteId first = m.site_at(p);
      bool block = true;
      for (int k = 0; k < w && block; ++k) {
        auto pos = m.position(first + k);
        block = pos && m.infected(*pos, c[*pos]);
      }
      if (!block) continue;
      ++checks;
      ok = check_isolation(m, c, first) && ok;
    }
  }
  return {checks, ok};
}

}  // namespace detail

inline OracleOutcome oracle_check(const Model& m, const Configuration& seed, std::size_t cap = kDefaultComponentCap) {
  OracleOutcome o;
  o.sites = m.size();
  o.R = m.range();
  o.q = m.q();
  const auto bfs = component_oracle_bfs(m, seed, cap);
  const ClosureResult cl = closure(m, seed);
  o.closure_ok = cl.closure_set == updatable_sites(m, bfs);
  const ComponentDescriptor comp = enumerate_component(m, seed, cap);
  o.members = comp.size();
  std::vector<Configuration> members = comp.members;
  std::sort(members.begin(), members.end());
  o.component_ok = members == bfs;
  const DominationReport dom = domination_check(comp);
  o.domination_ok = dom.ok() && dom.min_conditional >= m.q() - kProbabilityTolerance;
  o.min_conditional = dom.min_conditional;

  const SimplifiedModel sm = simplify(m, seed);
  auto [c1, ok1] = detail::isolation_sweep(m, comp);
  o.isolation_checks = c1;
  o.isolation_ok = ok1;
  if (!sm.degenerate) {
    const ComponentDescriptor scomp = enumerate_component(sm.model, sm.carried, cap);
    auto [c2, ok2] = detail::isolation_sweep(sm.model, scomp);
    o.isolation_checks += c2;
    o.isolation_ok = o.isolation_ok && ok2;
    const GapResult g1 = spectral_gap_exact(comp);
    const GapResult g2 = spectral_gap_exact(scomp);
    if (!g1.degenerate && !g2.degenerate) {
      o.gap_compared = true;
      o.trel = *g1.t_rel;
      o.trel_simplified = *g2.t_rel;
      o.simplify_ok = std::abs(o.trel - o.trel_simplified) <= 1e-9 * std::max(o.trel, o.trel_simplified);
    } else {
      o.simplify_ok = g1.degenerate == g2.degenerate;
    }
    const SimplifiedModel again = simplify(sm.model, sm.carried);
    o.idempotent = again.model == sm.model;
  } else {
    o.simplify_ok = comp.size() == 1;
    o.idempotent = true;
  }
  return o;
}

// ---------------------------------------------------------------------------
// Two-block calibration

namespace detail {

// C with C R^2 / q^(CR) = delta: the large-delta branch of gamma holds for C <= C_s.
inline double branch_switch(double delta, double q, int R) {
  const double R2 = static_cast<double>(R) * R;
  if (q >= 1.0) return delta / R2;
  auto f = [&](double C) { return C * R2 * std::pow(q, -C * R); };
  double lo = 0.0, hi = 1.0;
  while (f(hi) < delta) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < delta ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace detail

/// Smallest C such that gap * gamma(delta; C') >= 1 for every C' >= C.
/// gamma increases in C on each branch but may jump down at the switch, so
/// the feasible set is an upper interval only above this value.
inline double minimal_two_block_constant(double gap, double delta, double q, int R) {
  if (!(gap > 0.0)) return std::numeric_limits<double>::infinity();
  const double need = 1.0 / gap;
  if (need <= 1.0) return 0.0;
  const double R2 = static_cast<double>(R) * R;
  const double Cs = detail::branch_switch(delta, q, R);
  const double log2q = std::log(2.0 / q);
  const double small_min = std::max(Cs, std::log(need) / (R2 * log2q));
  auto g = [&](double C) { return gamma(delta, BoundParameters{q, R, 1, C}); };
  if (Cs > 0.0 && g(Cs) >= need && std::exp(Cs * R2 * log2q) >= need) {
    double lo = 0.0, hi = Cs;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= 0.0) break;
      (g(mid) >= need ? hi : lo) = mid;
    }
    return hi;
  }
  // Smallest value on the small-delta branch, nudged past rounding until it checks.
  double C = small_min;
  for (int i = 0; i < 200 && !(g(C) >= need && C > Cs); ++i) C = C * (1.0 + 1e-12) + 1e-300;
  return C;
}

struct TwoBlockInstance {
  std::string source;
  std::uint64_t seed = 0;
  Model model;
  Configuration config;
  int ell = 0, delta = 0;
};

/// East instances over sizes x q x all admissible (ell, delta), and random
/// simplified models with a random admissible split.
inline std::vector<TwoBlockInstance> two_block_instances(const std::vector<int>& sizes, const std::vector<double>& qs,
                                                         std::size_t random_count, std::uint64_t seed,
                                                         int max_sites = 8) {
  std::vector<TwoBlockInstance> out;
  for (int n : sizes)
    for (double q : qs) {
      ZooParams zp;
      zp.n = n;
      zp.q = q;
      zp.boundary = "left";
      const Model east = build_zoo_model("east", zp);
      const SimplifiedModel sm = simplify(east, east.initial_or_default());
      const int R = sm.model.range();
      for (int ell = 2 * R + 1; ell <= n; ++ell)
        for (int delta = 2 * R + 1; delta <= ell; ++delta)
          out.push_back({"east", 0, sm.model, sm.carried, ell, delta});
    }
  RandomModelParams gp;
  gp.max_sites = max_sites;
  gp.max_states = 2;
  gp.p_frozen = 0.05;
  std::size_t found = 0;
  for (std::uint64_t k = 0; found < random_count && k < 1000 * (random_count + 1); ++k) {
    const std::uint64_t s = splitmix64(seed + k);
    const Model m = random_model(gp, s);
    const SimplifiedModel sm = simplify(m, m.initial_or_default());
    if (sm.degenerate) continue;
    const int n = static_cast<int>(sm.model.size());
    const int R = sm.model.range();
    if (n < 2 * R + 1) continue;
    CounterRng rng(s, 7);
    const int ell = 2 * R + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 2 * R)));
    const int delta = 2 * R + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(ell - 2 * R)));
    const auto comp = enumerate_component(sm.model, sm.carried);
    if (comp.size() < 2) continue;
    out.push_back({"random", s, sm.model, sm.carried, ell, delta});
    ++found;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runners

struct ExperimentReport {
  std::filesystem::path manifest_path;
  std::vector<std::filesystem::path> files;
  Json manifest;
};

struct KindOutput {
  std::vector<std::pair<std::string, CsvTable>> tables;
  Json summary = Json::object();
};

using PartialWriter = std::function<void(const KindOutput&)>;

namespace detail {

template <class Fn>
std::vector<CellOutput> execute(std::size_t count, std::size_t jobs, Fn&& fn, KindOutput& partial,
                                const PartialWriter& flush, const std::function<std::string(std::size_t)>& where,
                                std::size_t main_table = 0, std::optional<std::size_t> extra_table = {}) {
  auto [outs, err] = run_cells(count, jobs, std::forward<Fn>(fn));
  std::vector<CellOutput> done;
  for (std::size_t i = 0; i < count; ++i) {
    if (err && i >= err->first) break;
    done.push_back(std::move(*outs[i]));
  }
  if (err) {
    for (const auto& c : done) {
      for (const auto& r : c.rows) partial.tables[main_table].second.rows.push_back(r);
      if (extra_table)
        for (const auto& r : c.extra) partial.tables[*extra_table].second.rows.push_back(r);
    }
    partial.summary["error_cell"] = err->first;
    flush(partial);
    rethrow_in_cell(err->second, "cell " + std::to_string(err->first) + " (" + where(err->first) + ")");
  }
  return done;
}

template <class... Grids>
std::size_t grid_size(const Grids&... g) {
  return (std::size_t{1} * ... * g.size());
}

}  // namespace detail

inline KindOutput run_gap_sweep(const ExperimentSpec& spec, std::size_t jobs, const PartialWriter& flush) {
  const auto Ls = spec.grid_or<int>("L", {2, 3, 4, 5, 6});
  const auto qs = spec.grid_or<double>("q", {0.3, 0.5, 0.8});
  const auto Cs = spec.grid_or<double>("C", {1.0});
  const auto cap = spec.option_or<std::size_t>("cap", kDefaultComponentCap);
  KindOutput out;
  out.tables.push_back({"gap_sweep.csv", {{"model", "q", "R", "L", "C", "members", "gap", "trel", "bound", "ratio"}, {}}});
  const std::size_t count = detail::grid_size(Ls, qs, Cs);
  auto cell = [&](std::size_t i) {
    const int n = Ls[i / (qs.size() * Cs.size())];
    const double q = qs[(i / Cs.size()) % qs.size()];
    const double C = Cs[i % Cs.size()];
    const Model m = model_from_source(spec.model, n, q);
    const auto comp = enumerate_component(m, m.initial_or_default(), cap);
    const GapResult g = spectral_gap_exact(comp);
    const double bound = theoretical_bound({m.q(), m.range(), std::max<std::uint64_t>(1, m.size()), C});
    const double trel = g.t_rel ? *g.t_rel : std::numeric_limits<double>::quiet_NaN();
    CellOutput c;
    c.rows.push_back({model_label(spec.model), format_double(m.q()), str(m.range()), str(m.size()), format_double(C),
                      str(comp.size()), format_double(g.gap), format_double(trel), format_double(bound),
                      format_double(trel / bound)});
    return c;
  };
  auto where = [&](std::size_t i) {
    return "L=" + std::to_string(Ls[i / (qs.size() * Cs.size())]) + " q=" + format_double(qs[(i / Cs.size()) % qs.size()]);
  };
  for (auto& c : detail::execute(count, jobs, cell, out, flush, where))
    for (auto& r : c.rows) out.tables[0].second.rows.push_back(std::move(r));
  out.summary["cells"] = count;
  return out;
}

inline KindOutput run_bound_check(const ExperimentSpec& spec, std::size_t jobs, const PartialWriter& flush) {
  const auto qs = spec.grid_or<double>("q", {0.5});
  const auto Ls = spec.grid_or<std::uint64_t>("L", {4, 1000000});
  const auto Rs = spec.grid_or<int>("R", {1});
  const auto Cs = spec.grid_or<double>("C", {1.0});
  const auto Ds = spec.grid_or<double>("delta", {0.0, 10.0});
  KindOutput out;
  out.tables.push_back({"bound_check.csv",
                        {{"q", "R", "L", "C", "delta", "theoretical_bound", "log_theoretical_bound", "gamma",
                          "recursion_log", "recursion_iterations", "recursion_final_size", "stalled"},
                         {}}});
  const std::size_t count = detail::grid_size(qs, Ls, Rs, Cs, Ds);
  auto coords = [&](std::size_t i) {
    std::size_t r = i;
    const double D = Ds[r % Ds.size()];
    r /= Ds.size();
    const double C = Cs[r % Cs.size()];
    r /= Cs.size();
    const int R = Rs[r % Rs.size()];
    r /= Rs.size();
    const std::uint64_t L = Ls[r % Ls.size()];
    r /= Ls.size();
    return std::make_tuple(qs[r], L, R, C, D);
  };
  auto cell = [&](std::size_t i) {
    const auto [q, L, R, C, D] = coords(i);
    const BoundParameters p{q, R, L, C};
    const RecursionResult rec = recursion_bound(p);
    CellOutput c;
    c.rows.push_back({format_double(q), str(R), std::to_string(L), format_double(C), format_double(D),
                      format_double(theoretical_bound(p)), format_double(log_theoretical_bound(p)),
                      format_double(gamma(D, p)), format_double(rec.log_value), str(rec.iterations),
                      std::to_string(rec.final_size), str(rec.stalled)});
    return c;
  };
  auto where = [&](std::size_t i) {
    const auto [q, L, R, C, D] = coords(i);
    return "q=" + format_double(q) + " L=" + std::to_string(L) + " R=" + std::to_string(R);
  };
  for (auto& c : detail::execute(count, jobs, cell, out, flush, where))
    for (auto& r : c.rows) out.tables[0].second.rows.push_back(std::move(r));
  out.summary["cells"] = count;
  return out;
}

/// Meeting statistics of one coupling cell.
struct CouplingCellResult {
  std::vector<std::optional<int>> meeting;  // per replica, main mode in double steps
  std::size_t event_checks = 0, violations = 0, stitches = 0, stitch_rejections = 0, law_mismatches = 0;
  double fitted_c = -std::numeric_limits<double>::infinity();  // easy mode
  double min_log_rate = std::numeric_limits<double>::infinity();
};

inline CouplingCellResult coupling_cell(const Model& simplified, const Configuration& start, int ell, int delta,
                                        std::size_t replicas, int max_steps, std::uint64_t seed, bool easy,
                                        std::size_t cap = kDefaultComponentCap, bool abort_on_violation = true) {
  const TwoBlockSplit split = make_split(simplified, ell, delta, easy ? SplitMode::general : SplitMode::coupling);
  const ComponentDescriptor comp = enumerate_component(simplified, start, cap);
  Coupler coupler(simplified, split, cap);
  CouplingCellResult res;
  CouplingOptions opt;
  opt.record_steps = false;
  opt.abort_on_violation = abort_on_violation;
  const double R2 = static_cast<double>(split.R) * split.R;
  for (std::size_t r = 0; r < replicas; ++r) {
    CounterRng start_rng(seed, 2 * r);
    const Configuration other = sample_member(comp, start_rng);
    const std::uint64_t dyn = splitmix64(seed ^ (2 * r + 1));
    if (easy) {
      const EasyCouplingTrace t = easy_coupling_run(coupler, start, other, dyn, abort_on_violation);
      res.violations += t.violations;
      res.meeting.push_back(t.meeting_step);
      if (t.meeting_step) {
        res.min_log_rate = std::min(res.min_log_rate, t.log_rate);
        if (simplified.q() < 2.0) res.fitted_c = std::max(res.fitted_c, t.log_rate / (R2 * std::log(simplified.q() / 2.0)));
      }
    } else {
      const CouplingTrace t = run_coupling(coupler, start, other, dyn, max_steps, opt);
      res.meeting.push_back(t.meeting_time);
      res.event_checks += t.event_checks;
      res.violations += t.violations;
      res.stitches += t.stitches;
      res.stitch_rejections += t.stitch_rejections;
      res.law_mismatches += t.law_mismatches;
    }
  }
  return res;
}

/// Fraction of replicas not met by double step t, for t = 0..max_steps.
inline std::vector<double> not_met_curve(const std::vector<std::optional<int>>& meeting, int max_steps) {
  std::vector<double> out(static_cast<std::size_t>(max_steps) + 1, 0.0);
  for (int t = 0; t <= max_steps; ++t) {
    std::size_t k = 0;
    for (const auto& m : meeting) k += (!m || *m > t) ? 1 : 0;
    out[static_cast<std::size_t>(t)] = static_cast<double>(k) / static_cast<double>(meeting.size());
  }
  return out;
}

inline KindOutput run_coupling_sweep(const ExperimentSpec& spec, std::size_t jobs, const PartialWriter& flush) {
  const auto Ls = spec.grid_or<int>("L", {8});
  const auto qs = spec.grid_or<double>("q", {0.5});
  const auto ells = spec.grid_or<int>("ell", {5});
  const auto deltas = spec.grid_or<int>("delta", {5});
  const auto replicas = spec.option_or<std::size_t>("replicas", 1000);
  const auto max_steps = spec.option_or<int>("max_steps", 200);
  const auto mode = spec.option_or<std::string>("mode", "main");
  const auto cap = spec.option_or<std::size_t>("cap", kDefaultComponentCap);
  if (mode != "main" && mode != "easy") throw ValidationError("options.mode must be 'main' or 'easy'");
  if (replicas < 1 || max_steps < 0) throw ValidationError("replicas must be positive and max_steps non-negative");
  const bool easy = mode == "easy";
  const std::uint64_t master = spec.master_seed();
  KindOutput out;
  out.tables.push_back({"coupling.csv",
                        {{"model", "mode", "q", "R", "L", "ell", "delta", "replicas", "met", "mean_meeting_step",
                          "event_checks", "violations", "stitches", "stitch_rejections", "law_mismatches",
                          "tail_exceedances", "fitted_c"},
                         {}}});
  out.tables.push_back({"coupling_tail.csv", {{"cell", "q", "L", "ell", "delta", "t", "not_met", "se", "y_tail"}, {}}});
  const std::size_t count = detail::grid_size(Ls, qs, ells, deltas);
  auto coords = [&](std::size_t i) {
    std::size_t r = i;
    const int d = deltas[r % deltas.size()];
    r /= deltas.size();
    const int e = ells[r % ells.size()];
    r /= ells.size();
    const double q = qs[r % qs.size()];
    r /= qs.size();
    return std::make_tuple(Ls[r], q, e, d);
  };
  auto cell = [&](std::size_t i) {
    const auto [L, q, ell, delta] = coords(i);
    const Model m = model_from_source(spec.model, L, q);
    const SimplifiedModel sm = simplify(m, m.initial_or_default());
    if (sm.model.size() != m.size()) throw PreconditionError("coupling needs a configuration with full closure");
    const CouplingCellResult res =
        coupling_cell(sm.model, sm.carried, ell, delta, replicas, max_steps, cell_seed(master, i), easy, cap);
    CellOutput c;
    std::size_t met = 0;
    double sum = 0.0;
    for (const auto& t : res.meeting)
      if (t) ++met, sum += easy ? *t : 2.0 * *t;  // single block updates
    const int R = sm.model.range();
    std::size_t exceed = 0;
    if (!easy) {
      const YChainParameters yp{sm.model.q(), R, static_cast<double>(delta)};
      const auto curve = not_met_curve(res.meeting, max_steps);
      for (int t = 0; t <= max_steps; ++t) {
        const double p = curve[static_cast<std::size_t>(t)];
        const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(replicas));
        const double y = y_chain_tail(t, yp);
        if (p > y + 3.0 * se) ++exceed;
        c.extra.push_back({str(i), format_double(q), str(L), str(ell), str(delta), str(t), format_double(p),
                           format_double(se), format_double(y)});
      }
    }
    c.rows.push_back({model_label(spec.model), mode, format_double(sm.model.q()), str(R), str(L), str(ell), str(delta),
                      str(replicas), str(met), format_double(met ? sum / static_cast<double>(met) : NAN),
                      str(res.event_checks), str(res.violations), str(res.stitches), str(res.stitch_rejections),
                      str(res.law_mismatches), str(exceed), easy ? format_double(res.fitted_c) : ""});
    c.summary = {{"violations", res.violations}, {"event_checks", res.event_checks}, {"tail_exceedances", exceed}};
    return c;
  };
  auto where = [&](std::size_t i) {
    const auto [L, q, ell, delta] = coords(i);
    return "L=" + std::to_string(L) + " q=" + format_double(q) + " ell=" + std::to_string(ell) +
           " delta=" + std::to_string(delta);
  };
  std::size_t violations = 0, checks = 0, exceed = 0;
  for (auto& c : detail::execute(count, jobs, cell, out, flush, where, 0, 1)) {
    for (auto& r : c.rows) out.tables[0].second.rows.push_back(std::move(r));
    for (auto& r : c.extra) out.tables[1].second.rows.push_back(std::move(r));
    violations += c.summary["violations"].get<std::size_t>();
    checks += c.summary["event_checks"].get<std::size_t>();
    exceed += c.summary["tail_exceedances"].get<std::size_t>();
  }
  if (easy) out.tables.pop_back();
  out.summary = {{"cells", count}, {"violations", violations}, {"event_checks", checks}, {"tail_exceedances", exceed}};
  return out;
}

inline KindOutput run_oracle_suite(const ExperimentSpec& spec, std::size_t jobs, const PartialWriter& flush) {
  const auto count = spec.option_or<std::size_t>("count", 500);
  RandomModelParams gp;
  gp.max_sites = spec.option_or<int>("max_sites", gp.max_sites);
  gp.max_states = spec.option_or<int>("max_states", gp.max_states);
  gp.max_range = spec.option_or<int>("max_range", gp.max_range);
  const std::uint64_t master = spec.master_seed();
  KindOutput out;
  out.tables.push_back({"oracle_suite.csv",
                        {{"index", "seed", "sites", "R", "q", "members", "closure_ok", "component_ok", "domination_ok",
                          "min_conditional", "isolation_checks", "isolation_ok", "gap_compared", "simplify_ok",
                          "trel", "trel_simplified", "idempotent"},
                         {}}});
  auto cell = [&](std::size_t i) {
    const std::uint64_t s = cell_seed(master, i);
    const Model m = random_model(gp, s);
    const OracleOutcome o = oracle_check(m, m.initial_or_default());
    CellOutput c;
    c.rows.push_back({str(i), std::to_string(s), str(o.sites), str(o.R), format_double(o.q), str(o.members),
                      str(o.closure_ok), str(o.component_ok), str(o.domination_ok), format_double(o.min_conditional),
                      str(o.isolation_checks), str(o.isolation_ok), str(o.gap_compared), str(o.simplify_ok),
                      format_double(o.trel), format_double(o.trel_simplified), str(o.idempotent)});
    const bool pass = o.closure_ok && o.component_ok && o.domination_ok && o.isolation_ok && o.simplify_ok && o.idempotent;
    c.summary = {{"pass", pass}, {"gap_compared", o.gap_compared}, {"isolation_checks", o.isolation_checks}};
    return c;
  };
  auto where = [&](std::size_t i) { return "model seed " + std::to_string(cell_seed(master, i)); };
  std::size_t passed = 0, compared = 0, iso = 0;
  for (auto& c : detail::execute(count, jobs, cell, out, flush, where)) {
    for (auto& r : c.rows) out.tables[0].second.rows.push_back(std::move(r));
    passed += c.summary["pass"].get<bool>() ? 1 : 0;
    compared += c.summary["gap_compared"].get<bool>() ? 1 : 0;
    iso += c.summary["isolation_checks"].get<std::size_t>();
  }
  out.summary = {{"models", count},       {"passed", passed}, {"all_pass", passed == count},
                 {"gap_compared", compared}, {"isolation_checks", iso}};
  return out;
}

inline KindOutput run_testfn(const ExperimentSpec& spec, std::size_t jobs, const PartialWriter& flush) {
  const auto ns = spec.grid_or<int>("L", {2, 3});
  const auto qs = spec.grid_or<double>("q", {0.2, 0.4});
  const auto ks = spec.grid_or<int>("k", {1, 2, 3});
  const auto cap = spec.option_or<std::size_t>("cap", kDefaultComponentCap);
  Json src = spec.model.is_null() ? Json{{"zoo", "unrooted-2n"}} : spec.model;
  KindOutput out;
  out.tables.push_back({"testfn.csv",
                        {{"model", "n", "q", "k", "members", "support", "constant", "lower_bound", "trel", "ok"}, {}}});
  const std::size_t count = detail::grid_size(ns, qs, ks);
  auto cell = [&](std::size_t i) {
    const int n = ns[i / (qs.size() * ks.size())];
    const double q = qs[(i / ks.size()) % qs.size()];
    const int k = ks[i % ks.size()];
    const Model m = model_from_source(src, n, q);
    const auto comp = enumerate_component(m, m.initial_or_default(), cap);
    const TestFunctionResult tf = test_function_lower_bound(comp, m.initial_or_default(), k);
    const GapResult g = spectral_gap_exact(comp);
    const double trel = g.t_rel ? *g.t_rel : NAN;
    const bool ok = tf.constant || tf.lower_bound <= trel * (1.0 + 1e-9);
    CellOutput c;
    c.rows.push_back({model_label(src), str(n), format_double(q), str(k), str(comp.size()), str(tf.support),
                      str(tf.constant), format_double(tf.lower_bound), format_double(trel), str(ok)});
    c.summary = {{"ok", ok}, {"nontrivial", !tf.constant && tf.lower_bound > 1.0}};
    return c;
  };
  auto where = [&](std::size_t i) { return "cell " + std::to_string(i); };
  bool all_ok = true, nontrivial = false;
  for (auto& c : detail::execute(count, jobs, cell, out, flush, where)) {
    for (auto& r : c.rows) out.tables[0].second.rows.push_back(std::move(r));
    all_ok = all_ok && c.summary["ok"].get<bool>();
    nontrivial = nontrivial || c.summary["nontrivial"].get<bool>();
  }
  out.summary = {{"cells", count}, {"all_ok", all_ok}, {"nontrivial", nontrivial}};
  return out;
}

inline KindOutput run_two_block(const ExperimentSpec& spec, std::size_t jobs, const PartialWriter& flush) {
  const auto Ls = spec.grid_or<int>("L", {4, 6, 8});
  const auto qs = spec.grid_or<double>("q", {0.3, 0.5, 0.8});
  const auto random = spec.option_or<std::size_t>("random_models", 30);
  const auto instances = two_block_instances(Ls, qs, random, spec.master_seed());
  KindOutput out;
  out.tables.push_back({"two_block.csv",
                        {{"instance", "source", "seed", "q", "R", "L", "ell", "delta", "members", "aux_gap", "C_min"},
                         {}}});
  auto cell = [&](std::size_t i) {
    const auto& in = instances[i];
    const TwoBlockSplit split = make_split(in.model, in.ell, in.delta, SplitMode::general);
    const AuxGapResult g = auxiliary_chain_gap(in.model, in.config, split);
    const double Cmin = minimal_two_block_constant(g.gap, in.delta, in.model.q(), split.R);
    CellOutput c;
    c.rows.push_back({str(i), in.source, std::to_string(in.seed), format_double(in.model.q()), str(split.R),
                      str(in.model.size()), str(in.ell), str(in.delta), str(g.members), format_double(g.gap),
                      format_double(Cmin)});
    c.summary = {{"gap", g.gap}, {"C_min", Cmin}};
    return c;
  };
  auto where = [&](std::size_t i) { return instances[i].source + " instance " + std::to_string(i); };
  const auto done = detail::execute(instances.size(), jobs, cell, out, flush, where);
  double Cstar = 0.0;
  for (const auto& c : done) {
    for (const auto& r : c.rows) out.tables[0].second.rows.push_back(r);
    Cstar = std::max(Cstar, c.summary.at("C_min").get<double>());
  }
  bool feasible = std::isfinite(Cstar);
  double min_product = std::numeric_limits<double>::infinity();
  if (feasible && Cstar > 0.0) {
    for (std::size_t i = 0; i < done.size(); ++i) {
      const double gap = done[i].summary.at("gap").get<double>();
      const auto& in = instances[i];
      const double prod = gap * gamma(in.delta, BoundParameters{in.model.q(), in.model.range(), 1, Cstar});
      min_product = std::min(min_product, prod);
    }
    feasible = min_product >= 1.0;
  }
  out.summary = {{"instances", instances.size()}, {"C_const", Cstar}, {"all_feasible", feasible},
                 {"min_gap_times_gamma", std::isfinite(min_product) ? Json(min_product) : Json(nullptr)}};
  return out;
}

// ---------------------------------------------------------------------------
// Entry points

inline KindOutput run_kind(const ExperimentSpec& spec, std::size_t jobs, const PartialWriter& flush) {
  if (spec.kind == "gap-sweep") return run_gap_sweep(spec, jobs, flush);
  if (spec.kind == "bound-check") return run_bound_check(spec, jobs, flush);
  if (spec.kind == "coupling-sweep") return run_coupling_sweep(spec, jobs, flush);
  if (spec.kind == "oracle-suite") return run_oracle_suite(spec, jobs, flush);
  if (spec.kind == "testfn") return run_testfn(spec, jobs, flush);
  if (spec.kind == "two-block") return run_two_block(spec, jobs, flush);
  throw ValidationError("unknown experiment kind '" + spec.kind + "'");
}

/// Runs the spec's grid, writing one CSV per table and manifest.json into the
/// output directory. The manifest holds the resolved spec (file models
/// inlined), its hash, the seeds and a hash of each CSV.
inline ExperimentReport run_experiment(const ExperimentSpec& input, std::optional<std::filesystem::path> output = {}) {
  ExperimentSpec spec = input;
  spec.model = resolve_model_source(spec.model);
  const std::filesystem::path dir = output ? *output : std::filesystem::path(spec.output);
  const Json resolved = spec.to_json();
  const std::string spec_text = resolved.dump();
  ExperimentReport rep;
  rep.manifest_path = dir / "manifest.json";

  auto write_all = [&](const KindOutput& ko, bool complete) {
    Json files = Json::array();
    rep.files.clear();
    for (const auto& [name, table] : ko.tables) {
      const std::string data = table.str();
      write_file(dir / name, data);
      rep.files.push_back(dir / name);
      files.push_back({{"file", name}, {"rows", table.rows.size()}, {"fnv1a", hex64(fnv1a64(data))}});
    }
    rep.manifest = {{"tool", "kcmlab"},
                    {"version", KCMLAB_VERSION},
                    {"spec", resolved},
                    {"spec_hash", hex64(fnv1a64(spec_text))},
                    {"seeds", spec.seeds},
                    {"outputs", files},
                    {"summary", ko.summary},
                    {"complete", complete}};
    write_file(rep.manifest_path, rep.manifest.dump(2) + "\n");
  };
  const KindOutput ko = run_kind(spec, resolve_jobs(spec.jobs), [&](const KindOutput& partial) { write_all(partial, false); });
  write_all(ko, true);
  return rep;
}

struct RerunResult {
  ExperimentReport report;
  bool reproduced = false;
  std::vector<std::string> mismatches;
};

/// Reruns the spec stored in a manifest and compares each CSV hash.
inline RerunResult rerun_from_manifest(const std::filesystem::path& manifest_path,
                                       std::optional<std::filesystem::path> output = {}) {
  Json manifest;
  try {
    manifest = Json::parse(read_file(manifest_path));
  } catch (const Json::parse_error& e) {
    throw ParseError(manifest_path.string(), e.what());
  }
  const ExperimentSpec spec = ExperimentSpec::from_json(detail::require_field(manifest, "spec", "manifest"));
  if (hex64(fnv1a64(spec.to_json().dump())) != manifest.value("spec_hash", ""))
    throw ValidationError("manifest spec hash does not match its spec");
  RerunResult res;
  res.report = run_experiment(spec, output ? *output : manifest_path.parent_path());
  std::map<std::string, std::string> expected;
  for (const auto& f : manifest.at("outputs")) expected[f.at("file").get<std::string>()] = f.at("fnv1a").get<std::string>();
  std::map<std::string, std::string> got;
  for (const auto& f : res.report.manifest.at("outputs")) got[f.at("file").get<std::string>()] = f.at("fnv1a").get<std::string>();
  for (const auto& [name, h] : expected)
    if (got[name] != h) res.mismatches.push_back(name);
  if (got.size() != expected.size()) res.mismatches.push_back("output set differs");
  res.reproduced = res.mismatches.empty();
  return res;
}

}  // namespace kcmlab
