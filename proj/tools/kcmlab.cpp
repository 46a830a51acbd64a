// kcmlab command line: model inspection, exact spectra, simulation, couplings
// and reproducible sweeps.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "kcmlab/kcmlab.hpp"

namespace {

using namespace kcmlab;

enum Exit { kOk = 0, kFailure = 1, kValidation = 2, kCap = 3, kAssertion = 4 };

struct ModelInput {
  std::string file;
  std::string zoo;
  int n = 3;
  double q = 0.5;
  std::string boundary;
  std::string config;  // JSON object or path to one
  std::size_t cap = kDefaultComponentCap;

  void attach(CLI::App* sub) {
    sub->add_option("--model", file, "model JSON file");
    sub->add_option("--zoo", zoo, "zoo model: east, fa1f, unrooted-2n, six-rule");
    sub->add_option("--n", n, "zoo size parameter");
    sub->add_option("--q", q, "zoo infection probability");
    sub->add_option("--boundary", boundary, "zoo boundary: infected, healthy, left, right");
    sub->add_option("--config", config, "configuration as a JSON object (or a file holding one)");
    sub->add_option("--cap", cap, "component enumeration cap");
  }

  Model model() const {
    if (!file.empty() && !zoo.empty()) throw ValidationError("give either --model or --zoo, not both");
    if (!file.empty()) return load_model(file);
    ZooParams zp;
    zp.n = n;
    zp.q = q;
    zp.boundary = boundary;
    return build_zoo_model(zoo.empty() ? "east" : zoo, zp);
  }

  Configuration configuration(const Model& m) const {
    if (config.empty()) return m.initial_or_default();
    std::string text = config;
    if (text.find('{') == std::string::npos) text = read_file(text);
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ParseError("--config", e.what());
    }
    return configuration_from_json(m, j);
  }
};

// Rewrites "--spec file.json" into the equivalent flags for subcommands that
// take plain options. Arrays expand into repeated values.
std::vector<std::string> expand_spec(std::vector<std::string> args) {
  if (args.size() < 2 || args[1] == "sweep") return args;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] != "--spec" || i + 1 >= args.size()) {
      out.push_back(args[i]);
      continue;
    }
    Json j;
    try {
      j = Json::parse(read_file(args[++i]));
    } catch (const Json::parse_error& e) {
      throw ParseError(args[i], e.what());
    }
    if (!j.is_object()) throw ValidationError("--spec must hold a JSON object");
    for (const auto& [key, val] : j.items()) {
      out.push_back("--" + key);
      auto scalar = [](const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (val.is_array())
        for (const auto& v : val) out.push_back(scalar(v));
      else if (val.is_object())
        out.push_back(val.dump());
      else if (!val.is_boolean())
        out.push_back(scalar(val));
      else if (!val.get<bool>())
        out.pop_back();
    }
  }
  return out;
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("cannot write " + path);
  return file;
}

Json domination_json(const DominationReport& d) {
  return {{"q", d.q},
          {"min_conditional", d.min_conditional},
          {"argmin_site", d.argmin_site ? Json(*d.argmin_site) : Json(nullptr)},
          {"violating_sites", d.violating_sites},
          {"ok", d.ok()}};
}

int run(int argc, char** argv) {
  CLI::App app{"kcmlab: kinetically constrained models on finite volumes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", KCMLAB_VERSION);

  ModelInput in;
  int exit_code = kOk;

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "check a model against the definitions");
  in.attach(validate_cmd);
  validate_cmd->callback([&] {
    const Model m = in.model();
    const ValidationReport rep = validate(m);
    if (rep.ok()) {
      std::cout << "valid: " << m.size() << " sites, R = " << m.range() << ", q = " << format_double(m.q()) << "\n";
    } else {
      std::cout << rep.summary();
      exit_code = kValidation;
    }
  });

  // closure
  auto* closure_cmd = app.add_subcommand("closure", "closure, frozen states and witness order");
  in.attach(closure_cmd);
  closure_cmd->callback([&] {
    const Model m = in.model();
    require_valid(m);
    const ClosureResult cl = closure(m, in.configuration(m));
    Json frozen = Json::object();
    for (const auto& [x, s] : cl.frozen) frozen[std::to_string(x)] = m.space(x).labels[s];
    Json witness = Json::array();
    for (const auto& w : cl.witness_order) witness.push_back({{"site", w.site}, {"rule", m.families().at(w.site).rules[w.rule]}});
    print({{"closure", cl.closure_set}, {"frozen", frozen}, {"witness", witness}});
  });

  // component
  std::string dump_path;
  auto* component_cmd = app.add_subcommand("component", "enumerate the irreducible component");
  in.attach(component_cmd);
  component_cmd->add_option("--dump", dump_path, "write members as CSV");
  component_cmd->callback([&] {
    const Model m = in.model();
    const auto comp = enumerate_component(m, in.configuration(m), in.cap);
    print({{"members", comp.size()},
           {"normalizer", comp.normalizer},
           {"closure", comp.closure_set},
           {"domination", domination_json(domination_check(comp))}});
    if (!dump_path.empty()) {
      CsvTable t;
      for (SiteId x : m.volume()) t.header.push_back(std::to_string(x));
      t.header.push_back("weight");
      for (std::size_t i = 0; i < comp.size(); ++i) {
        CsvRow r;
        for (std::size_t p = 0; p < m.size(); ++p) r.push_back(m.space_at(p).labels[comp.members[i][p]]);
        r.push_back(format_double(comp.weights[i]));
        t.rows.push_back(std::move(r));
      }
      write_file(dump_path, t.str());
    }
  });

  // gap
  auto* gap_cmd = app.add_subcommand("gap", "exact spectral gap and relaxation time");
  in.attach(gap_cmd);
  gap_cmd->callback([&] {
    const Model m = in.model();
    const auto comp = enumerate_component(m, in.configuration(m), in.cap);
    const GapResult g = spectral_gap_exact(comp);
    print({{"gap", g.gap},
           {"t_rel", g.t_rel ? Json(*g.t_rel) : Json(nullptr)},
           {"members", g.members},
           {"degenerate", g.degenerate},
           {"method", g.method}});
  });

  // bound
  BoundParameters bp;
  double bound_delta = 0.0;
  auto* bound_cmd = app.add_subcommand("bound", "closed-form relaxation-time bounds");
  bound_cmd->add_option("--q", bp.q, "infection probability")->capture_default_str();
  bound_cmd->add_option("--R", bp.R, "range")->capture_default_str();
  bound_cmd->add_option("--L", bp.L_size, "volume size")->capture_default_str();
  bound_cmd->add_option("--C", bp.C, "absolute constant")->capture_default_str();
  bound_cmd->add_option("--delta", bound_delta, "overlap size for gamma")->capture_default_str();
  bound_cmd->callback([&] {
    const RecursionResult r = recursion_bound(bp);
    print({{"theoretical_bound", theoretical_bound(bp)},
           {"log_theoretical_bound", log_theoretical_bound(bp)},
           {"gamma", gamma(bound_delta, bp)},
           {"recursion_bound", r.value},
           {"recursion_log", r.log_value},
           {"recursion_iterations", r.iterations},
           {"recursion_final_size", r.final_size},
           {"recursion_stalled", r.stalled}});
  });

  // testfn
  int testfn_k = 1;
  auto* testfn_cmd = app.add_subcommand("testfn", "test-function lower bound on the relaxation time");
  in.attach(testfn_cmd);
  testfn_cmd->add_option("--k", testfn_k, "allowed extra simultaneous infections")->capture_default_str();
  testfn_cmd->callback([&] {
    const Model m = in.model();
    const Configuration seed = in.configuration(m);
    const auto comp = enumerate_component(m, seed, in.cap);
    const TestFunctionResult tf = test_function_lower_bound(comp, seed, testfn_k);
    const GapResult g = spectral_gap_exact(comp);
    print({{"lower_bound", tf.constant ? Json(nullptr) : Json(tf.lower_bound)},
           {"support", tf.support},
           {"members", comp.size()},
           {"constant", tf.constant},
           {"t_rel", g.t_rel ? Json(*g.t_rel) : Json(nullptr)}});
  });

  // simulate
  double horizon = 10.0;
  std::size_t replicas = 1;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  std::vector<std::string> observables{"density"};
  std::string out_path;
  auto* simulate_cmd = app.add_subcommand("simulate", "continuous-time KCM dynamics");
  in.attach(simulate_cmd);
  simulate_cmd->add_option("--T", horizon, "time horizon")->capture_default_str();
  simulate_cmd->add_option("--replicas", replicas)->capture_default_str();
  simulate_cmd->add_option("--seed", seed)->capture_default_str();
  simulate_cmd->add_option("--observables", observables, "density and/or site:ID")->capture_default_str();
  simulate_cmd->add_option("--jobs", jobs, "worker threads (default KCMLAB_JOBS or 1)");
  simulate_cmd->add_option("--out", out_path, "CSV output (default stdout)");
  simulate_cmd->callback([&] {
    const Model m = in.model();
    SimulationConfig cfg;
    cfg.horizon = horizon;
    cfg.seed = seed;
    cfg.replicas = replicas;
    cfg.jobs = resolve_jobs(jobs);
    for (const auto& name : observables) {
      if (name == "density")
        cfg.observables.push_back(infection_density(m));
      else if (name.rfind("site:", 0) == 0)
        cfg.observables.push_back(site_indicator(m, std::stoi(name.substr(5))));
      else
        throw ValidationError("unknown observable '" + name + "'");
    }
    const auto stats = simulate_kcm(m, in.configuration(m), cfg);
    CsvTable t;
    t.header = {"replica", "events", "accepted"};
    for (const auto& o : cfg.observables) t.header.push_back(o.name);
    for (const auto& s : stats) {
      CsvRow r{str(s.replica), std::to_string(s.events), std::to_string(s.accepted)};
      for (double v : s.time_averages) r.push_back(format_double(v));
      t.rows.push_back(std::move(r));
    }
    std::ofstream f;
    open_out(out_path, f) << t.str();
  });

  // couple
  int ell = 0, delta = 0, max_steps = 200;
  std::string mode = "main", trace_path;
  auto* couple_cmd = app.add_subcommand("couple", "coupled two-block chains");
  in.attach(couple_cmd);
  couple_cmd->add_option("--ell", ell, "L1 = first ell sites")->required();
  couple_cmd->add_option("--delta", delta, "overlap size")->required();
  couple_cmd->add_option("--replicas", replicas)->capture_default_str();
  couple_cmd->add_option("--max-steps", max_steps, "double steps")->capture_default_str();
  couple_cmd->add_option("--seed", seed)->capture_default_str();
  couple_cmd->add_option("--mode", mode)->check(CLI::IsMember({"main", "easy"}))->capture_default_str();
  couple_cmd->add_option("--trace", trace_path, "per-step CSV");
  couple_cmd->add_option("--out", out_path, "CSV output (default stdout)");
  couple_cmd->callback([&] {
    const Model raw = in.model();
    require_valid(raw);
    const SimplifiedModel sm = simplify(raw, in.configuration(raw));
    if (sm.model.size() != raw.size()) throw PreconditionError("coupling needs a configuration with full closure");
    const Model& m = sm.model;
    const bool easy = mode == "easy";
    const TwoBlockSplit split = make_split(m, ell, delta, easy ? SplitMode::general : SplitMode::coupling);
    const auto comp = enumerate_component(m, sm.carried, in.cap);
    Coupler coupler(m, split, in.cap);
    CsvTable t, tr;
    t.header = {"replica", "meeting_step", "violations", "event_checks"};
    if (easy)
      tr.header = {"replica", "round", "accept_l1", "accept_l1_prime", "accept_l2", "accept_l2_prime",
                   "boundary_l1", "boundary_l1_prime", "boundary_l2", "boundary_l2_prime"};
    else
      tr.header = {"replica", "t", "X", "X_prime", "condition", "stitch_site", "stitch_rejected", "met"};
    CouplingOptions opt;
    opt.record_steps = !trace_path.empty();
    for (std::size_t r = 0; r < replicas; ++r) {
      CounterRng start_rng(seed, 2 * r);
      const Configuration other = sample_member(comp, start_rng);
      const std::uint64_t dyn = splitmix64(seed ^ (2 * r + 1));
      if (easy) {
        const EasyCouplingTrace et = easy_coupling_run(coupler, sm.carried, other, dyn);
        t.rows.push_back({str(r), et.meeting_step ? str(*et.meeting_step) : "", str(et.violations), "0"});
        for (const auto& rd : et.rounds)
          tr.rows.push_back({str(r), str(rd.round), format_double(rd.accept_l1[0]), format_double(rd.accept_l1[1]),
                             format_double(rd.accept_l2[0]), format_double(rd.accept_l2[1]), str(rd.boundary_for_l1[0]),
                             str(rd.boundary_for_l1[1]), str(rd.boundary_for_l2[0]), str(rd.boundary_for_l2[1])});
      } else {
        const CouplingTrace ct = run_coupling(coupler, sm.carried, other, dyn, max_steps, opt);
        t.rows.push_back({str(r), ct.meeting_time ? str(2 * *ct.meeting_time) : "", str(ct.violations),
                          str(ct.event_checks)});
        for (const auto& s : ct.steps)
          tr.rows.push_back({str(r), str(s.t), str(s.X), str(s.Xp), str(s.condition_held),
                             s.stitch_center ? str(*s.stitch_center) : "", str(s.stitch_rejected), str(s.met)});
      }
    }
    std::ofstream f;
    open_out(out_path, f) << t.str();
    if (!trace_path.empty()) write_file(trace_path, tr.str());
  });

  // sweep
  std::string spec_path, manifest_path, out_dir;
  auto* sweep_cmd = app.add_subcommand("sweep", "run an experiment spec, or rerun a manifest");
  auto* spec_opt = sweep_cmd->add_option("--spec", spec_path, "experiment spec JSON");
  auto* manifest_opt = sweep_cmd->add_option("--manifest", manifest_path, "rerun from a manifest and compare outputs");
  spec_opt->excludes(manifest_opt);
  sweep_cmd->add_option("--out", out_dir, "output directory (overrides the spec)");
  sweep_cmd->add_option("--jobs", jobs, "worker threads (default KCMLAB_JOBS or 1)");
  sweep_cmd->callback([&] {
    std::optional<std::filesystem::path> dir;
    if (!out_dir.empty()) dir = out_dir;
    if (!manifest_path.empty()) {
      const RerunResult rr = rerun_from_manifest(manifest_path, dir);
      print({{"manifest", rr.report.manifest_path.string()}, {"reproduced", rr.reproduced}, {"mismatches", rr.mismatches}});
      if (!rr.reproduced) exit_code = kAssertion;
      return;
    }
    if (spec_path.empty()) throw ValidationError("sweep needs --spec or --manifest");
    Json j;
    try {
      j = Json::parse(read_file(spec_path));
    } catch (const Json::parse_error& e) {
      throw ParseError(spec_path, e.what());
    }
    ExperimentSpec spec = ExperimentSpec::from_json(j);
    if (jobs) spec.jobs = jobs;
    const ExperimentReport rep = run_experiment(spec, dir);
    print({{"manifest", rep.manifest_path.string()}, {"summary", rep.manifest.at("summary")}});
  });

  // oracle-suite
  std::size_t count = 500;
  auto* oracle_cmd = app.add_subcommand("oracle-suite", "closure, component, domination and simplification oracles");
  oracle_cmd->add_option("--count", count, "random models")->capture_default_str();
  oracle_cmd->add_option("--seed", seed)->capture_default_str();
  oracle_cmd->add_option("--out", out_dir, "output directory")->capture_default_str();
  oracle_cmd->add_option("--jobs", jobs, "worker threads (default KCMLAB_JOBS or 1)");
  oracle_cmd->callback([&] {
    ExperimentSpec spec;
    spec.kind = "oracle-suite";
    spec.seeds = {{"master", seed}};
    spec.options = {{"count", count}};
    spec.output = out_dir.empty() ? "oracle-suite" : out_dir;
    spec.jobs = jobs;
    const ExperimentReport rep = run_experiment(spec);
    const Json& s = rep.manifest.at("summary");
    print({{"manifest", rep.manifest_path.string()}, {"summary", s}});
    if (!s.at("all_pass").get<bool>()) exit_code = kAssertion;
  });

  std::vector<std::string> args(argv, argv + argc);
  args = expand_spec(std::move(args));
  std::vector<const char*> cargs;
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const kcmlab::CapExceeded& e) {
    std::cerr << "cap exceeded: " << e.what() << "\n";
    return kCap;
  } catch (const kcmlab::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kValidation;
  } catch (const kcmlab::PreconditionError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kValidation;
  } catch (const kcmlab::PropertyViolation& e) {
    std::cerr << "assertion failed: " << e.what() << "\n";
    return kAssertion;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
