#pragma once

#include <algorithm>
#include <cmath>

namespace eki {

// One classical RK4 step for dy/dt = f(t, y). State needs +, scalar * and +=;
// State(expr) forces evaluation of Eigen expression temporaries.
template <typename State, typename Rhs>
void rk4_step(State& y, double t, double h, Rhs&& f) {
  const State k1 = f(t, y);
  const State k2 = f(t + 0.5 * h, State(y + 0.5 * h * k1));
  const State k3 = f(t + 0.5 * h, State(y + 0.5 * h * k2));
  const State k4 = f(t + h, State(y + h * k3));
  y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Fixed-step integration over [t0, t1]; the final step is shortened so the
// result lands on t1 exactly.
template <typename State, typename Rhs>
State rk4_integrate(State y, double t0, double t1, double dt, Rhs&& f) {
  double t = t0;
  const double end_slack = 1e-12 * std::max(1.0, std::abs(t1));
  while (t < t1 - end_slack) {
    const double h = std::min(dt, t1 - t);
    rk4_step(y, t, h, f);
    t += h;
  }
  return y;
}

}  // namespace eki
