"""Smoke test for the `vfc` extension module.

Build and install first:

    cd crates/python && maturin build --release -o dist && pip install dist/vfc-*.whl
    python python/smoke_test.py
"""

import math
import sys
import tempfile
from pathlib import Path

import vfc


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def check_graph():
    g = vfc.Graph.ring(4)
    assert g.n_agents == 4 and len(g.edges) == 4
    dec = g.decompose()
    assert all(close(a, b) for a, b in zip(dec.eigenvalues, [2.0, 2.0, 4.0]))
    # R^T 1 = 0 and orthonormal columns.
    r = dec.r_matrix
    for j in range(3):
        assert abs(sum(row[j] for row in r)) < 1e-12
        assert close(sum(row[j] ** 2 for row in r), 1.0)
    try:
        vfc.Graph(3, [(0, 1)]).decompose()
    except vfc.VfcError as e:
        assert "connected" in str(e)
    else:
        raise AssertionError("disconnected graph accepted")


def check_transforms():
    dec = vfc.Graph.path(3).decompose()
    x = [0.3, -1.0, 2.5, 0.1, -0.7, 1.9]
    chi_o, chi_t = dec.to_sync_coords(x, 2)
    assert close(chi_o[0], (0.3 + 2.5 - 0.7) / 3)
    back = dec.from_sync_coords(chi_o, chi_t)
    assert all(close(a, b) for a, b in zip(x, back))
    th_o, th_t = dec.to_param_coords(x, 2)
    assert all(close(a, b) for a, b in zip(x, dec.from_param_coords(th_o, th_t)))
    assert dec.xi(chi_t, [0.0] * 4, [[1.0, 0.0], [0.0, 1.0]], 10.0) == chi_t


def check_simulate():
    g = vfc.Graph.ring(3)
    x0 = [[0.5], [-0.2], [1.0]]
    theta0 = [[1.5, 0.8], [1.0, 1.2], [0.5, 1.0]]
    traj = vfc.simulate("scalar_linear_sine", g, x0, theta0, k=10.0, dt=0.01, t_end=20.0, record_every=10)
    assert len(traj) == 201 and traj.n_agents == 3
    assert close(traj.times[-1], 20.0)
    assert traj.sync_err[-1] < traj.sync_err[0]
    assert traj.norm_chi_tilde[-1] < 1e-2
    # The parameter average is preserved to first order and stays near its start.
    assert abs(traj.vartheta_o[-1][0] - 1.0) < 0.3
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "run.csv"
        traj.write_csv(str(path))
        assert path.read_text().splitlines()[0].startswith("t,x_0_0")

    uncoupled = vfc.simulate("scalar_linear_sine", g, x0, theta0, k=0.0, g=0.0, dt=0.01, t_end=1.0)
    assert all(v is None for v in uncoupled.norm_xi)

    try:
        vfc.simulate("scalar_linear_sine", g, x0, theta0, k=50.0, dt=0.5, t_end=1.0)
    except vfc.VfcError:
        pass
    else:
        raise AssertionError("stiff step accepted")


def check_analysis():
    d = vfc.decay_bounds(math.pi, math.pi, 2 * math.pi, 1.0)
    kappa2 = (2 * (2 * math.pi ** 2) ** 2 + 2 * math.pi ** 2) / math.pi
    assert close(d["kappa2"], kappa2) and close(d["kappa1"], kappa2 + 2 * math.pi ** 2)

    dt = 2 * math.pi / 400
    series = [[[math.cos(i * dt), math.sin(i * dt)]] for i in range(1601)]
    pe = vfc.pe_gram(series, dt, 2 * math.pi)
    assert abs(pe["c1"] - math.pi) < 1e-6 and abs(pe["c2"] - math.pi) < 1e-6

    ts = [0.1 * i for i in range(100)]
    rate, intercept = vfc.fit_exp_rate(ts, [3.0 * math.exp(-0.7 * t) for t in ts])
    assert close(rate, 0.7, 1e-9) and close(intercept, math.log(3.0), 1e-9)

    rep = vfc.analyze("fig2")
    for key in ("pe", "contraction", "decay", "p_bounds", "proof_constants", "checks"):
        assert rep[key] is not None, key
    assert rep["contraction"]["c"] == 0.5


def check_scenario():
    with tempfile.TemporaryDirectory() as d:
        cfg = Path(d) / "short.json"
        cfg.write_text('{"preset": "fig2", "name": "short", "integrator": {"t_end": 3.0}}')
        traj, report = vfc.run_scenario(str(cfg), d)
        assert report["name"] == "short" and len(traj) == 31
        assert (Path(d) / "short.csv").exists()
    res = vfc.run_criterion(14)
    assert res["pass"] and res["id"] == 14, res


def main():
    assert "fig2" in vfc.PRESETS and len(vfc.CRITERIA) == 14
    for check in (check_graph, check_transforms, check_simulate, check_analysis, check_scenario):
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
