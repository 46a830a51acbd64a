#pragma once

#include <catch_amalgamated.hpp>

#include "kcmlab/kcmlab.hpp"

namespace kt {

using namespace kcmlab;

inline constexpr StateIndex H = 0, I = 1;

// U1 = {{2}}, U2 = {{1}}, binary uniform, no boundary.
inline Model mutual() {
  const auto sp = SiteStateSpace::binary(0.5);
  return Model({1, 2}, {{1, sp}, {2, sp}}, {{1, {{Rule{2}}}}, {2, {{Rule{1}}}}}, {});
}

inline Model single(UpdateFamily fam, double q = 0.5) {
  return Model({1}, {{1, SiteStateSpace::binary(q)}}, {{1, std::move(fam)}}, {});
}

inline Model east(int n, double q, const std::string& boundary = "left") {
  ZooParams zp;
  zp.n = n;
  zp.q = q;
  zp.boundary = boundary;
  return build_zoo_model("east", zp);
}

inline Configuration cfg(std::vector<StateIndex> s) { return Configuration(std::move(s)); }

inline void require_close(double got, double want, double rel) {
  INFO("got " << format_double(got) << " want " << format_double(want));
  REQUIRE(std::abs(got - want) <= rel * std::max(1.0, std::abs(want)));
}

}  // namespace kt
