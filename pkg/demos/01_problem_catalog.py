"""Tour of the problem catalog and the sampled assumption checks.

Each preset bundles dynamics, generator, terminal data and the two
reflection barriers; validate_problem then tries to falsify the standing
regularity assumptions on a reproducible random sample.  The last section
shows the checker catching a problem whose drift outruns its declared
Lipschitz budget.
"""

import numpy as np

from drgame import (ControlGrid, GameProblem, make_preset, preset_names,
                    validate_problem)

print("catalog:", ", ".join(preset_names()))
print()

for name in preset_names():
    p = make_preset(name, {})
    rep = validate_problem(p, samples=2000, seed=0)
    grids = f"{p.u_grid.size} x {p.v_grid.size}"
    print(f"{name:22s} control grids {grids:7s} gamma={p.lipschitz:<5.3g} "
          f"assumptions pass: {rep.passed}")

print()
print("worst observed quotient ratios for linear-quadratic:")
rep = validate_problem(make_preset("linear-quadratic", {}), samples=5000, seed=1)
for row in rep.rows:
    print(f"  {row[0]:28s} {row[1]:10.3e}  pass={row[2]}")

print()
print("a dishonest problem: drift 2x declared with Lipschitz budget 1")
bad = GameProblem(
    state_dim=1, noise_dim=1, horizon=1.0,
    drift=lambda t, x, u, v: 2.0 * x,
    diffusion=lambda t, x, u, v: np.full(np.shape(x)[:-1] + (1, 1), 1.0),
    generator=lambda t, x, y, z, u, v: np.zeros(np.shape(x)[:-1]),
    terminal=lambda x: np.zeros(np.shape(x)[:-1]),
    lower_obstacle=lambda t, x: np.full(np.shape(x)[:-1], -10.0),
    upper_obstacle=lambda t, x: np.full(np.shape(x)[:-1], 10.0),
    lipschitz=1.0, holder_q=2.0,
    u_grid=ControlGrid.singleton(), v_grid=ControlGrid.singleton())
rep = validate_problem(bad, samples=2000, seed=2)
print(f"  coefficient_x_lipschitz ratio = "
      f"{rep.ratio('coefficient_x_lipschitz'):.3f} (expected ~2), "
      f"pass={rep.passed}")
