#include "helpers.hpp"

using namespace kt;

namespace {

ObservableFunction random_f(const ComponentDescriptor& comp, CounterRng& rng) {
  ObservableFunction f;
  for (std::size_t i = 0; i < comp.size(); ++i) f.values.push_back(rng.uniform() * 2.0 - 1.0);
  return f;
}

}  // namespace

TEST_CASE("single unconstrained site: variance, Dirichlet form, gap") {
  const Model m = single(UpdateFamily::unconstrained(), 0.5);
  const auto comp = enumerate_component(m, cfg({H}));
  const ObservableFunction f{{0.0, 1.0}};
  require_close(variance(comp, f), 0.25, 1e-15);
  require_close(dirichlet_form(comp, f), 0.25, 1e-15);
  require_close(dirichlet_form(comp, ObservableFunction{{3.0, 3.0}}), 0.0, 1e-15);
  for (double q : {0.1, 0.5, 0.9}) {
    const auto c = enumerate_component(single(UpdateFamily::unconstrained(), q), cfg({H}));
    const auto g = spectral_gap_exact(c);
    require_close(g.gap, 1.0, 1e-12);
    require_close(*g.t_rel, 1.0, 1e-12);
  }
}

TEST_CASE("frozen singleton is degenerate") {
  const auto comp = enumerate_component(single(UpdateFamily::frozen()), cfg({I}));
  const auto g = spectral_gap_exact(comp);
  REQUIRE(g.degenerate);
  REQUIRE_FALSE(g.t_rel.has_value());
}

TEST_CASE("east pair gap") {
  // eigenvalues 0, 1 - sqrt(2)/2, 1, 1 + sqrt(2)/2 (symbolic oracle)
  const Model m = east(2, 0.5, "infected");
  const auto comp = enumerate_component(m, cfg({H, H}));
  const auto g = spectral_gap_exact(comp);
  require_close(g.gap, 1.0 - std::sqrt(2.0) / 2.0, 1e-12);
  // variational check over a random family
  CounterRng rng(3);
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 20000; ++k) {
    const auto f = random_f(comp, rng);
    best = std::min(best, dirichlet_form(comp, f) / variance(comp, f));
    REQUIRE(dirichlet_form(comp, f) / variance(comp, f) >= g.gap * (1.0 - 1e-9));
  }
  REQUIRE(best <= g.gap * 1.05);
}

TEST_CASE("mutual model Dirichlet form") {
  const auto comp = enumerate_component(mutual(), cfg({I, H}));
  ObservableFunction f;
  for (const auto& c : comp.members) f.values.push_back(c == cfg({I, I}) ? 1.0 : 0.0);
  require_close(dirichlet_form(comp, f), 1.0 / 3.0, 1e-14);
}

TEST_CASE("east gap values") {
  // numpy oracle over the explicit transition graph
  const std::vector<std::tuple<int, double, double>> want{
      {2, 0.3, 0.16333997346592435}, {3, 0.5, 0.14536232028153848}, {4, 0.8, 0.34722109636919485},
      {5, 0.3, 0.019721554549136253}, {6, 0.5, 0.0659212361521423}};
  for (auto [n, q, gap] : want) {
    const Model m = east(n, q, "infected");
    require_close(spectral_gap_exact(enumerate_component(m, m.initial_or_default())).gap, gap, 1e-10);
  }
}

TEST_CASE("sparse path agrees with dense") {
  const Model m = east(7, 0.4, "infected");
  const auto comp = enumerate_component(m, m.initial_or_default());
  const auto dense = spectral_gap_exact(comp);
  GapOptions opt;
  opt.dense_cap = 16;
  const auto sparse = spectral_gap_exact(comp, opt);
  REQUIRE(sparse.method == "shift-invert");
  require_close(sparse.gap, dense.gap, 1e-9);

  const Model u = build_zoo_model("unrooted-2n", {3, 0.4, ""});
  const auto cu = enumerate_component(u, u.initial_or_default());
  require_close(spectral_gap_exact(cu, opt).gap, spectral_gap_exact(cu).gap, 1e-9);
}

TEST_CASE("generator is symmetric PSD with simple zero eigenvalue") {
  for (std::uint64_t seed = 0; seed < 80; ++seed) {
    const Model m = random_model({}, seed);
    const auto comp = enumerate_component(m, m.initial_or_default());
    if (comp.size() < 2) continue;
    const auto S = symmetrized_generator_dense(comp);
    REQUIRE((S - S.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    REQUIRE(es.eigenvalues()(0) > -1e-10);
    REQUIRE(std::abs(es.eigenvalues()(0)) < 1e-10);
    REQUIRE(es.eigenvalues()(1) > 1e-10);
    const auto g = spectral_gap_exact(comp);
    REQUIRE(g.gap <= 1.0 + 1e-12);
  }
}

TEST_CASE("law of total variance") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const Model m = random_model({}, seed);
    const auto comp = enumerate_component(m, m.initial_or_default());
    if (comp.closure_set.empty()) continue;
    CounterRng rng(seed, 11);
    const auto f = random_f(comp, rng);
    const std::vector<SiteId> X{comp.closure_set.front()};
    // group members by their states on closure \ X
    std::map<std::vector<StateIndex>, std::vector<std::size_t>> slices;
    const std::size_t px = *m.position(X[0]);
    for (std::size_t i = 0; i < comp.size(); ++i) {
      std::vector<StateIndex> k(comp.members[i].states().begin(), comp.members[i].states().end());
      k[px] = -1;
      slices[k].push_back(i);
    }
    double mean_var = 0.0, var_mean = 0.0;
    const double total_mean = expectation(comp, f);
    for (const auto& [k, idx] : slices) {
      std::map<SiteId, StateIndex> outside;
      for (SiteId y : comp.closure_set)
        if (y != X[0]) outside[y] = comp.members[idx[0]][*m.position(y)];
      double w = 0.0, mu_f = 0.0;
      for (std::size_t i : idx) w += comp.mu(i), mu_f += comp.mu(i) * f.values[i];
      mu_f /= w;
      mean_var += w * var_X(comp, f, X, outside);
      var_mean += w * (mu_f - total_mean) * (mu_f - total_mean);
    }
    require_close(mean_var + var_mean, variance(comp, f), 1e-12);
  }
}

TEST_CASE("bound formulas") {
  // 40-digit mpmath evaluations
  require_close(theoretical_bound({1.0, 1, 4, 1.0}), 1.616806672241674663, 1e-12);
  require_close(theoretical_bound({0.5, 1, 4, 1.0}), 6.833329631010781086, 1e-12);
  require_close(theoretical_bound({0.3, 2, 50, 0.7}) / 566370903.1681571855, 1.0, 1e-12);
  REQUIRE(theoretical_bound({0.5, 1, 1, 1.0}) == 1.0);
  require_close(gamma(1, {1.0, 1, 1, 1.0}), 1.367879441171442322, 1e-12);
  require_close(gamma(0, {0.5, 1, 1, 1.0}), 4.0, 1e-12);
  require_close(gamma(10, {0.5, 1, 1, 1.0}), 1.006737946999085467, 1e-12);
  REQUIRE_THROWS_AS(gamma(-1, {}), PreconditionError);
  REQUIRE_THROWS_AS(theoretical_bound({0.0, 1, 4, 1.0}), PreconditionError);
}

TEST_CASE("recursion") {
  auto r = recursion_bound({0.5, 1, 1000000, 1.0});
  require_close(r.log_value, 5.491954514123849539, 1e-12);
  REQUIRE(r.iterations == 24);
  REQUIRE(r.final_size == 33);
  REQUIRE(r.stalled);

  r = recursion_bound({0.5, 1, 3, 1.0});
  REQUIRE(r.iterations == 0);
  require_close(r.log_value, 1.921812055672805699, 1e-12);

  r = recursion_bound({0.2, 1, 1000000, 3.0});
  require_close(r.log_value, 99.26874544415557454, 1e-12);
  REQUIRE(r.iterations == 12);
  REQUIRE(r.final_size == 661);
  REQUIRE_FALSE(r.stalled);

  // doubling |L| never lowers the bound unless the iteration stalls; stalled
  // runs take different small-N paths and can come out lower (q=0.1, C=1, |L|=1093)
  std::size_t compared = 0;
  for (double q : {0.1, 0.3, 0.5, 0.9})
    for (double C : {0.5, 1.0, 2.0, 3.0})
      for (std::uint64_t L = 1; L < 2000000; L = L * 3 + 1) {
        const auto a = recursion_bound({q, 1, L, C}), b = recursion_bound({q, 1, 2 * L, C});
        if (a.stalled || b.stalled) continue;
        ++compared;
        REQUIRE(b.log_value >= a.log_value - 1e-12);
      }
  REQUIRE(compared > 30);
}

TEST_CASE("test function bound") {
  const Model u = build_zoo_model("unrooted-2n", {3, 0.2, ""});
  const auto comp = enumerate_component(u, u.initial_or_default());
  const auto g = spectral_gap_exact(comp);
  require_close(*g.t_rel, 120.54127535459635, 1e-10);
  bool nontrivial = false;
  for (int k = 1; k <= 4; ++k) {
    const auto tf = test_function_lower_bound(comp, u.initial_or_default(), k);
    if (tf.constant) continue;
    REQUIRE(tf.lower_bound <= *g.t_rel * (1.0 + 1e-9));
    nontrivial = nontrivial || tf.lower_bound > 1.0;
  }
  REQUIRE(nontrivial);
  REQUIRE(test_function_lower_bound(comp, u.initial_or_default(), 100).constant);
  REQUIRE_THROWS_AS(test_function_lower_bound(comp, u.initial_or_default(), 0), PreconditionError);
}
