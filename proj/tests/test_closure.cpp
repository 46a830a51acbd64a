#include "helpers.hpp"

using namespace kt;

TEST_CASE("east closure") {
  const Model inf = east(3, 0.5, "infected");
  auto cl = closure(inf, cfg({H, H, H}));
  REQUIRE(cl.closure_set == std::vector<SiteId>{1, 2, 3});
  REQUIRE(cl.frozen.empty());
  REQUIRE(cl.witness_order.size() == 3);
  REQUIRE(cl.witness_order[0].site == 1);

  const Model healthy = east(3, 0.5, "healthy");
  cl = closure(healthy, cfg({H, H, H}));
  REQUIRE(cl.closure_set.empty());
  REQUIRE(cl.frozen.size() == 3);

  cl = closure(healthy, cfg({H, I, H}));
  REQUIRE(cl.closure_set == std::vector<SiteId>{3});
  REQUIRE(cl.frozen.at(2) == I);
}

TEST_CASE("mutual closure") {
  const auto cl = closure(mutual(), cfg({I, H}));
  REQUIRE(cl.closure_set == std::vector<SiteId>{1, 2});
  REQUIRE(closure(mutual(), cfg({H, H})).closure_set.empty());
}

TEST_CASE("witness order is valid on random models") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const Model m = random_model({}, seed);
    const Configuration c = m.initial_or_default();
    const auto cl = closure(m, c);
    std::set<SiteId> earlier;
    for (const auto& w : cl.witness_order) {
      const Rule& rule = m.families().at(w.site).rules.at(w.rule);
      for (SiteId y : rule) {
        bool infected;
        if (auto p = m.position(y))
          infected = m.infected(*p, c[*p]);
        else
          infected = m.space(y).infected[m.boundary().at(y)];
        REQUIRE((infected || earlier.count(y)));
      }
      earlier.insert(w.site);
    }
    REQUIRE(earlier.size() == cl.closure_set.size());
    REQUIRE(cl.closure_set.size() + cl.frozen.size() == m.size());
  }
}

TEST_CASE("closure is monotone in infections") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const Model m = random_model({}, seed);
    Configuration c = m.initial_or_default();
    const auto base = closure(m, c).in_closure;
    CounterRng rng(seed, 5);
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (rng.uniform() < 0.5) continue;
      for (std::size_t s = 0; s < m.num_states(p); ++s)
        if (m.infected(p, static_cast<StateIndex>(s))) c.set(p, static_cast<StateIndex>(s));
    }
    const auto more = closure(m, c).in_closure;
    for (std::size_t p = 0; p < m.size(); ++p)
      if (base[p]) REQUIRE(more[p]);
  }
}

TEST_CASE("simplify absorbs an infected boundary") {
  const auto sp = SiteStateSpace::binary(0.5);
  const Model m({1}, {{1, sp}, {0, sp}}, {{1, {{Rule{0}}}}}, {{0, I}});
  const auto s = simplify(m, cfg({H}));
  REQUIRE(s.model.families().at(1).rules == std::vector<Rule>{Rule{}});
  REQUIRE(s.model.boundary().empty());
  REQUIRE(is_simplified_form(s.model));
  REQUIRE(s.provenance.rewrites.size() == 1);
}

TEST_CASE("simplify drops rules with healthy boundary and frozen sites") {
  const Model m = east(3, 0.5, "healthy");
  auto s = simplify(m, cfg({H, H, H}));
  REQUIRE(s.degenerate);
  REQUIRE(s.model.size() == 0);
  REQUIRE(s.provenance.dropped_frozen.size() == 3);

  s = simplify(m, cfg({H, I, H}));
  REQUIRE(s.model.volume() == std::vector<SiteId>{1});
  REQUIRE(s.model.families().at(1).rules == std::vector<Rule>{Rule{}});
  REQUIRE(s.site_map.at(3) == 1);
}

TEST_CASE("simplify on random models") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const Model m = random_model({}, seed);
    const auto s = simplify(m, m.initial_or_default());
    REQUIRE(validate(s.model).ok() == !s.degenerate);
    if (s.degenerate) continue;
    REQUIRE(is_simplified_form(s.model));
    REQUIRE(closure(s.model, s.carried).closure_set.size() == s.model.size());
    REQUIRE(s.model.range() <= m.range());
    REQUIRE(s.model.q() >= m.q());
    const auto again = simplify(s.model, s.carried);
    REQUIRE(again.model == s.model);
  }
}

TEST_CASE("isolation") {
  const Model m = east(7, 0.5, "infected");
  const Configuration all(std::vector<StateIndex>(7, I));
  for (SiteId x = 1; x + 2 <= 7; ++x) REQUIRE(check_isolation(m, all, x));
  REQUIRE_THROWS_AS(check_isolation(m, cfg({I, I, H, I, I, I, I}), 2), PreconditionError);
  REQUIRE_THROWS_AS(check_isolation(m, all, 6), PreconditionError);
  const Model h = east(4, 0.5, "healthy");
  REQUIRE_THROWS_AS(check_isolation(h, cfg({H, I, I, I}), 2), PreconditionError);
}
