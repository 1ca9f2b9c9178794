"""Smoke test for the pyrepstop extension.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml -o target/wheels
    pip install target/wheels/pyrepstop-*.whl
"""

import math

import pyrepstop as rs


def main():
    g = rs.GameParams.figure()
    p_zero, p_high = g.myopic_cutoffs()
    assert math.isclose(p_zero, 0.5) and math.isclose(p_high, 0.9)

    eq = rs.solve_equilibrium(g, rs.Numerics(grid_n=2001))
    assert eq.regime == "HumpShaped", eq.regime
    assert abs(eq.p_star - 0.5626) < 1e-3, eq.p_star
    assert abs(eq.p_l - 0.1930) < 1e-3 and abs(eq.p_r - 0.6317) < 1e-3
    assert p_zero <= eq.p_star <= p_high
    assert 0.0 < eq.policy(0.4) < 1.0
    beliefs, values = eq.principal_curve()
    assert len(beliefs) == len(values) == 2001
    under, over = g.benchmark_values(0.4)
    assert under - 1e-12 <= eq.principal_value(0.4) <= over + 1e-12

    rep = eq.simulate(0.4, n_paths=2000, seed=7)
    v = rep["agent_value"]
    assert abs(v["mean"] - eq.agent_value(0.4)) < 4 * v["se"], v
    assert rep == eq.simulate(0.4, n_paths=2000, seed=7)

    rows = rs.sweep_psi(g, [1.0, 2.0, 5.0], numerics=rs.Numerics(grid_n=1001))
    assert [r["error"] for r in rows] == [None] * 3
    rows = rs.sweep_patience(g, [1.0, 0.3], numerics=rs.Numerics(grid_n=1001))
    assert rows[1]["sup_gap"] < rows[0]["sup_gap"]

    for bad in (lambda: rs.GameParams(1, 1, 1, -1, 1, 1, 1, -1), lambda: eq.simulate(0.4, noise="pink")):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    print("smoke test passed: p* = %.4f" % eq.p_star)


if __name__ == "__main__":
    main()
