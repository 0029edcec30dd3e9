import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs

from qfibounds import bench
from qfibounds.errors import CapacityError, ValidationError


def test_config_defaults_and_validation():
    c = bench.ExperimentConfig()
    assert (c.p, c.R, c.target_error) == (0.25, 50, 0.1)
    for bad in ({"R": 0}, {"M_grid": (10, 10)}, {"p": 1.5}, {"family": "w"}, {"family": "custom"}):
        with pytest.raises(ValidationError):
            bench.ExperimentConfig(**bad)


def test_config_round_trip():
    c = bench.ExperimentConfig(family="noon", N_list=(4, 6), M_grid=(10, 20), seed=3)
    back = bench.ExperimentConfig.from_json(json.dumps(c.to_dict()))
    assert back == c
    with pytest.raises(ValidationError):
        bench.ExperimentConfig.from_dict({"nope": 1})


def test_convergence_rows():
    rows = bench.run_convergence(bench.ExperimentConfig(N_list=(3,), p_list=(0.0, 1.0), n_max=4))
    pure = [r for r in rows if r["p"] == 0.0]
    assert all(r["F_n"] == pytest.approx(9) and r["F_Q"] == pytest.approx(9) for r in pure)
    assert all(r["F_n"] == 0 and r["F_Q"] == 0 for r in rows if r["p"] == 1.0)


def test_convergence_ratio_ghz10():
    rows = bench.run_convergence(bench.ExperimentConfig(N_list=(10,), p_list=(0.5,), n_max=8))
    xi = np.array([r["xi_n"] for r in rows])
    np.testing.assert_allclose(xi[:-1] / xi[1:], 1 / ((1 - 2 / 1024) * 0.5), rtol=1e-9)


def test_pstar_rows():
    rows = bench.run_pstar_curves(bench.ExperimentConfig(N_list=(4,), k_list=(1, 2, 3, 4)))
    by = {(r["k"], r["order"]): r for r in rows}
    for k in (1, 2, 3):
        vals = [by[(k, o)]["p_star"] for o in ("0", "1", "2", "qfi")]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
    assert by[(4, "qfi")]["p_star"] == 0 and not by[(4, "qfi")]["detectable"]


def test_find_M_examples():
    c = bench.find_M_at_error([(100, 0.2), (200, 0.05)], 0.1)
    assert c.M == pytest.approx(100 + 0.1 / 0.15 * 100) and c.flag == "ok"
    assert bench.find_M_at_error([(100, 0.2), (200, 0.1), (400, 0.05)], 0.1).M == 200
    c = bench.find_M_at_error([(100, 0.3), (200, 0.05), (400, 0.12), (800, 0.04)], 0.1)
    assert c.flag == "non-monotone"
    assert c.M == pytest.approx(400 + 0.02 / 0.08 * 400)
    c = bench.find_M_at_error([(100, 0.3), (200, 0.2)], 0.1)
    assert math.isnan(c.M) and c.flag == "no-bracket"


@given(hs.lists(hs.floats(1e-3, 10), min_size=2, max_size=8, unique=True))
def test_find_M_within_bracket(errs):
    errs = sorted(errs, reverse=True)
    Ms = [10 * 2**i for i in range(len(errs))]
    target = 0.5 * (errs[0] + errs[-1])
    c = bench.find_M_at_error(list(zip(Ms, errs)), target)
    assert Ms[0] <= c.M <= Ms[-1]


def test_fit_exponent_exact():
    pts = [(N, 2 ** (1 + 0.5 * N)) for N in range(2, 7)]
    f = bench.fit_exponent(pts, "exp2")
    assert (f.a, f.b) == (pytest.approx(0.5), pytest.approx(1.0))
    assert max(abs(r) for r in f.residuals) < 1e-12
    f = bench.fit_exponent([(N, 10 * N**0.6) for N in (4, 8, 16, 20)], "power")
    assert f.a == pytest.approx(0.6) and f.c == pytest.approx(10)


def test_fit_exponent_noisy_recovers_truth():
    rng = np.random.default_rng(0)
    Ns = np.arange(2, 12)
    hits = 0
    for _ in range(200):
        noise = rng.normal(0, 0.1, Ns.size)
        f = bench.fit_exponent(list(zip(Ns, 2 ** (3 + 0.7 * Ns + noise))), "exp2")
        sigma = 0.1 / np.sqrt(np.sum((Ns - Ns.mean()) ** 2))
        hits += abs(f.a - 0.7) < 2 * sigma
    assert hits >= 180


def test_fit_exponent_errors():
    with pytest.raises(ValidationError):
        bench.fit_exponent([(2, 10), (3, 20)])
    with pytest.raises(ValidationError):
        bench.fit_exponent([(2, 10), (2, 20), (2, 30)])
    with pytest.raises(ValidationError):
        bench.fit_exponent([(2, 10), (3, -1), (4, 30)])


def test_loglog_slope():
    assert bench.loglog_slope([10, 100, 1000], [1, 10**-0.5, 0.1]) == pytest.approx(-0.5)


def test_error_scaling_small_run():
    c = bench.ExperimentConfig(N_list=(2, 3, 4), M_grid=(20, 100, 500), R=4, seed=1)
    res = bench.run_error_scaling(c)
    assert len(res.rows) == 3 * 3 * 2
    assert all(r.mean_error >= 0 for r in res.rows)
    again = bench.run_error_scaling(c)
    assert [r.mean_error for r in again.rows] == [r.mean_error for r in res.rows]
    pooled = bench.run_error_scaling(bench.ExperimentConfig(**{**c.to_dict(), "workers": 2}))
    assert pooled.row_dicts() == res.row_dicts()
    assert res.exact[0][2] == pytest.approx(
        bench.fisher.bounds_spectral(*bench.family_problem(c, 2, 0.25)[:2], 0).orders[0]
    )


def test_error_scaling_refuses_big_runs():
    with pytest.raises(CapacityError, match="rounds"):
        bench.run_error_scaling(bench.ExperimentConfig(max_rounds=1000))


def test_error_scaling_rejects_zero_bound():
    with pytest.raises(ValidationError):
        bench.run_error_scaling(bench.ExperimentConfig(N_list=(2,), p=1.0, M_grid=(10,), R=1))


def test_custom_family(tmp_path):
    rho = np.diag([0.7, 0.3]).astype(complex)
    rho[0, 1] = rho[1, 0] = 0.2
    np.save(tmp_path / "r.npy", rho)
    np.save(tmp_path / "a.npy", np.diag([0.5, -0.5]))
    c = bench.ExperimentConfig(family="custom", custom_state=str(tmp_path / "r.npy"),
                               custom_observable=str(tmp_path / "a.npy"), N_list=(1,), M_grid=(10, 50), R=2)
    rows = bench.run_convergence(c)
    assert rows and rows[0]["family"] == "custom"
    assert len(bench.run_error_scaling(c).rows) == 4
