"""Smoke test for the `blackstock` extension module.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math
import tempfile

import blackstock

CONFIG = """
name = "smoke"

[model]
kind = "blackstock"

[mesh]
geometry = "interval"
degree = 2
dofs = [101]
length = 0.4

[time]
t_end = 1e-5
steps = 40
scheme = "chung_hulbert"
rho_inf = 0.8

[initial.psi1]
kind = "gaussian"
amplitude = 3e5
mu = [0.2]
sigma2 = 1e-4

[output]
sample_points = 101
snapshots = [1e-5]
energy = true
"""


def main():
    first, vals = blackstock.bspline_basis([0, 0, 0, 0.5, 1, 1, 1], 2, 0.3)
    assert abs(sum(vals) - 1.0) < 1e-14 and first == 0

    nodes, weights = blackstock.gauss_legendre(4)
    assert abs(sum(w * x**6 for x, w in zip(nodes, weights)) - 2 / 7) < 1e-14

    times = [0.1 * i for i in range(50)]
    omega, r2 = blackstock.fit_decay_rate(times, [math.exp(-3.0 * t) for t in times])
    assert abs(omega - 3.0) < 1e-9 and r2 > 0.999999

    cfg = blackstock.Config.from_toml(CONFIG)
    assert abs(cfg.k - 5.0 / 1500.0**2) < 1e-18

    sim = blackstock.Simulation(cfg)
    e0 = sim.energy()
    its = sim.run(40)
    assert len(its) == 40 and all(i >= 1 for i in its)
    assert abs(sim.time - 1e-5) < 1e-15
    p = sim.pressure([(0.2, 0.0), (0.0, 0.0)])
    assert all(math.isfinite(v) for v in p)
    assert sim.energy() < 1.01 * e0

    with tempfile.TemporaryDirectory() as out:
        summary = blackstock.run_config(cfg, out)
        assert summary["steps"] == 40 and summary["status"] == "ok"

    try:
        blackstock.Config.from_toml(CONFIG.replace('kind = "blackstock"', 'kind = "nope"'))
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    assert "fig8_hifu_2d" in blackstock.PRESETS
    assert len(blackstock.Config.preset("fig6_model_comparison")) == 3
    print("python smoke test passed")


if __name__ == "__main__":
    main()
