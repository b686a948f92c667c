#pragma once

#include <random>

#include "cbfsos/poly.hpp"

namespace cbfsos::testing {

inline Polynomial X(int i, int nvars = 2) { return Polynomial::variable(nvars, i); }

inline Polynomial h_example() {
  const Polynomial x1 = X(0), x2 = X(1);
  return -0.1 * x1 * x1 - 0.15 * x1 * x2 - 0.1 * x2 * x2 + 4.9;
}

// Sum of three squares of random quadratics in two variables.
inline Polynomial random_sos_quartic(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Polynomial out(2);
  for (int k = 0; k < 3; ++k) {
    Polynomial q(2);
    for (const auto& m : monomial_basis(2, 2)) q += Polynomial::monomial(m, nd(rng));
    out += q * q;
  }
  return out;
}

}  // namespace cbfsos::testing
