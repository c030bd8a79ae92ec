"""Acceptance criteria 1 to 10.

Each test prints one ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line (visible even without ``-s``) and then asserts. Run just this suite with

    pytest tests/test_acceptance.py -v

or ``python tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest
from conftest import sis_logistic, rps_model

from meanfield import (
    BackoffParameters,
    cross_level_check,
    decoupling_test,
    detect_limit_cycle,
    find_fixed_points,
    fixed_point_residual,
    integrate,
    level4_marginal_test,
    lln_test,
    sis_model,
    solve_gamma_star,
    wlan_model,
)
from meanfield.cli import main
from meanfield.limits import pair_oracle_zscore

# Frozen 50-digit bisection oracle (see tests/test_wlan.py).
GAMMA_STAR_1_05_025 = 0.42749152492914539364


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return emit


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def test_criterion_1_level1_golden_value(report):
    solve_gamma_star([1.0, 0.5, 0.25])  # warm-up
    times, errs = [], []
    for c, want in (([math.log(2)] * 3, 0.5), ([1.0, 0.5, 0.25], GAMMA_STAR_1_05_025)):
        runs = [_timed(solve_gamma_star, c) for _ in range(21)]
        times.append(float(np.median([dt for _, dt in runs])))
        errs.append(max(abs(rep.gamma_star - want) for rep, _ in runs))
    ok = max(errs) < 1e-10 and max(times) < 1e-3
    report(1, ok, f"errors {errs[0]:.1e}, {errs[1]:.1e} (< 1e-10); "
                  f"median solve {times[0] * 1e3:.3f} ms, {times[1] * 1e3:.3f} ms (< 1 ms)")


def test_criterion_2_cross_level_identity(report):
    cases = [(c0, K) for c0 in (0.5, 1.0, 2.0) for K in (1, 2, 4)]
    t0 = time.perf_counter()
    reps = [cross_level_check(BackoffParameters.exponential_backoff(c0, K)) for c0, K in cases]
    dt = time.perf_counter() - t0
    worst = max(max(r.attempt_residual, r.collision_residual) for r in reps)
    ok = worst < 1e-6 and dt < 1.0
    report(2, ok, f"worst residual {worst:.1e} over {len(cases)} cases (< 1e-6); {dt:.3f} s (< 1 s)")


def test_criterion_3_level2_exactness(report):
    t0 = time.perf_counter()
    sis = sis_model(2.0, 1.0)
    fps = {
        "sis": find_fixed_points(sis),
        "wlan3": find_fixed_points(wlan_model([1.0, 0.5, 0.25])),
        "wlan5": find_fixed_points(wlan_model([1.0 / 2**i for i in range(5)])),
    }
    dt = time.perf_counter() - t0
    worst = max(fixed_point_residual(m, r.point) for m, key in ((sis, "sis"),) for r in fps[key])
    worst = max([worst] + [r.residual for reps in fps.values() for r in reps])
    sis_fps = sorted(fps["sis"], key=lambda r: r.point[1])
    points_ok = len(sis_fps) == 2 and all(abs(r.point[1] - v) < 1e-8 for r, v in zip(sis_fps, (0.0, 0.5)))
    kinds = [r.stability for r in sis_fps]
    eigs = [float(r.spectrum[0].real) for r in sis_fps]
    eig_ok = len(eigs) == 2 and abs(eigs[0] - 1) < 1e-4 and abs(eigs[1] + 1) < 1e-4
    ok = worst < 1e-10 and points_ok and kinds == ["unstable", "stable"] and eig_ok and dt < 1.0
    report(3, ok, f"max residual {worst:.1e}; SIS I* = {[round(float(r.point[1]), 10) for r in sis_fps]} "
                  f"{kinds} eigenvalues {[round(e, 6) for e in eigs]}; {dt:.3f} s (< 1 s)")


def test_criterion_4_integrator(report):
    t0 = time.perf_counter()
    sis = sis_model(2.0, 1.0)
    wlan5 = wlan_model([1.0 / 2**i for i in range(5)])
    flows = [integrate(sis, [1 - i0, i0], 20.0) for i0 in (0.001, 0.01, 0.1, 0.3, 0.9)]
    flows += [integrate(wlan5, wlan5.vertex(z), 30.0) for z in range(5)]
    flows += [integrate(wlan_model([1.0, 0.5, 0.25]), [0.2, 0.3, 0.5], 30.0)]
    flows += [integrate(rps_model(), [0.6, 0.3, 0.1], 30.0), integrate(rps_model(0.5), [0.6, 0.3, 0.1], 30.0)]
    sum_err = max(np.max(np.abs(f.points.sum(axis=1) - 1)) for f in flows)
    min_raw = min(f.info["min_raw"] for f in flows)

    nu = np.array([0.5, 0.2, 0.1, 0.1, 0.1])
    semi = 0.0
    for s, t in ((1.0, 2.5), (3.0, 7.0), (0.2, 0.3)):
        direct = integrate(wlan5, nu, s + t).final
        split = integrate(wlan5, integrate(wlan5, nu, s).final, t).final
        semi = max(semi, np.max(np.abs(direct - split)))

    logistic = 0.0
    for f, i0 in zip(flows[:5], (0.001, 0.01, 0.1, 0.3, 0.9)):
        grid = np.linspace(0.0, 20.0, 2001)
        logistic = max(logistic, np.max(np.abs(f.at(grid)[:, 1] - sis_logistic(2.0, 1.0, i0, grid))))
    dt = time.perf_counter() - t0
    ok = sum_err < 1e-10 and min_raw >= -1e-12 and semi < 1e-8 and logistic < 1e-7 and dt < 1.0
    report(4, ok, f"{len(flows)} flows: sum error {sum_err:.1e}, min pre-projection {min_raw:.1e}; "
                  f"semigroup {semi:.1e}; logistic sup error {logistic:.1e}; {dt:.3f} s (< 1 s)")


def test_criterion_5_stationary_flow(report):
    models = [sis_model(2.0, 1.0), sis_model(1.0, 2.0), wlan_model([1.0, 0.5, 0.25])]
    models += [wlan_model(BackoffParameters.exponential_backoff(c0, 4).c) for c0 in (0.5, 1.0, 2.0)]
    stable = [(m, r.point) for m in models for r in find_fixed_points(m, n_starts=8) if r.stability == "stable"]
    t0 = time.perf_counter()
    drift_max = max(np.max(np.abs(integrate(m, p, 100.0).points - p)) for m, p in stable)
    dt = time.perf_counter() - t0
    ok = drift_max < 1e-8 and dt < 1.0
    report(5, ok, f"{len(stable)} stable points, max excursion over T=100 {drift_max:.1e} (< 1e-8); "
                  f"{dt:.3f} s (< 1 s)")


def test_criterion_6_law_of_large_numbers(report):
    table, dt = _timed(lln_test, sis_model(2.0, 1.0), [0.9, 0.1], 10.0, [100, 1000, 10000], replicas=100, seed=6)
    s = table.statistic
    ok = s[-1] < 0.05 and bool(np.all(np.diff(s) < 0)) and s[0] / s[-1] > 3 and dt < 300
    report(6, ok, f"median sup-grid TV {np.round(s, 4).tolist()} at N=100/1000/10000; "
                  f"ratio {s[0] / s[-1]:.2f} (> 3); {dt:.1f} s (< 300 s)")


def test_criterion_7_propagation_of_chaos(report):
    sis = sis_model(2.0, 1.0)
    t0 = time.perf_counter()
    table = decoupling_test(sis, [0.9, 0.1], 5.0, [50, 500], replicas=2000, seed=7)
    _, _, z = pair_oracle_zscore(sis, [0.9, 0.1], 5.0, 2000, seed=7)
    dt = time.perf_counter() - t0
    s50, s500 = table.value(50), table.value(500)
    ok = s500 < 0.05 and s500 < s50 and z < 3 and dt < 300
    report(7, ok, f"joint-law TV {s50:.4f} at N=50, {s500:.4f} at N=500 (< 0.05); "
                  f"N=2 pair oracle max z {z:.2f} (< 3); {dt:.1f} s (< 300 s)")


def test_criterion_8_level4_marginals(report):
    table, dt = _timed(level4_marginal_test, sis_model(2.0, 1.0), [0.9, 0.1], 10.0, replicas=2000, seed=8)
    worst = float(table.statistic.max())
    ok = worst < 0.05 and dt < 120
    report(8, ok, f"max marginal TV over {len(table.rows)} grid times {worst:.4f} (< 0.05); {dt:.1f} s (< 120 s)")


def test_criterion_9_limit_cycle_sanity(report):
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    verdicts = {}
    for name, model in (("sis", sis_model(2.0, 1.0)),
                        ("wlan", wlan_model(BackoffParameters.exponential_backoff(1.0, 4).c))):
        starts = rng.dirichlet(np.ones(model.n_states), size=20)
        verdicts[name] = [detect_limit_cycle(model, nu, 500.0).verdict for nu in starts]
    two_state = [sis_model(2.0, 1.0), sis_model(1.0, 2.0), sis_model(3.0, 0.5), wlan_model([1.0, 0.5]),
                 wlan_model([0.3, 2.0])]
    cycles = [detect_limit_cycle(m, nu, 200.0).cycle for m in two_state for nu in rng.dirichlet([1, 1], size=5)]
    dt = time.perf_counter() - t0
    points = {k: sum(v == "converged-to-point" for v in vs) for k, vs in verdicts.items()}
    n_cycles = sum(c is not None for c in cycles)
    ok = all(n == 20 for n in points.values()) and n_cycles == 0 and dt < 30
    report(9, ok, f"converged-to-point SIS {points['sis']}/20, WLAN {points['wlan']}/20; "
                  f"cycle descriptors for 2-state models {n_cycles}/{len(cycles)}; {dt:.1f} s (< 30 s)")


C10_CONFIGS = {
    "simulate": ('[model]\nname = "sis"\ntau = 2.0\nrho = 1.0\n',
                 'name = "simulate"\nseed = 10\nN = 500\nT = 5.0\ninit = [0.9, 0.1]\ntagged = [0, 7]'),
    "integrate": ('[model]\nname = "wlan"\nc0 = 1.0\nK = 4\n',
                  'name = "integrate"\nseed = 10\nT = 20.0\ninit = [0.2, 0.2, 0.2, 0.2, 0.2]'),
    "fixed-points": ('[model]\nname = "wlan"\nc0 = 1.0\nK = 4\n', 'name = "fixed-points"\nseed = 10'),
    "wlan-gamma": ('[model]\nname = "wlan"\nc = [1.0, 0.5, 0.25]\n', 'name = "wlan-gamma"\nseed = 10'),
    "cross-check": ('[model]\nname = "wlan"\nc0 = 1.0\nK = 4\n',
                    'name = "cross-check"\nseed = 10\nc0_list = [0.5, 1.0]\nK_list = [1, 4]'),
    "lln": ('[model]\nname = "sis"\ntau = 2.0\nrho = 1.0\n',
            'name = "lln"\nseed = 10\nT = 5.0\ninit = [0.9, 0.1]\nN_list = [50, 200]\nreplicas = 30'),
    "decoupling": ('[model]\nname = "sis"\ntau = 2.0\nrho = 1.0\n',
                   'name = "decoupling"\nseed = 10\nT = 2.0\ninit = [0.9, 0.1]\nN_list = [10, 40]\nreplicas = 500'),
    "level4": ('[model]\nname = "sis"\ntau = 2.0\nrho = 1.0\n',
               'name = "level4"\nseed = 10\nT = 5.0\ninit = [0.9, 0.1]\nreplicas = 500\ngrid_points = 11'),
    "limit-cycle": ('[model]\nname = "wlan"\nc = [1.0, 0.5, 0.25]\n',
                    'name = "limit-cycle"\nseed = 10\nT_max = 300.0\nn_random_starts = 2'),
}


def test_criterion_10_manifest_reproducibility(report, tmp_path):
    t0 = time.perf_counter()
    mismatched = []
    for name, (model, command) in C10_CONFIGS.items():
        cfg = tmp_path / f"{name}.toml"
        cfg.write_text(f"{model}\n[command]\n{command}\n")
        first, second = tmp_path / f"{name}-w1", tmp_path / f"{name}-w2"
        codes = (main(["--config", str(cfg), "--out", str(first), "--workers", "1"]),
                 main(["--config", str(first / "manifest.toml"), "--out", str(second), "--workers", "2"]))
        a = {p.name: p.read_bytes() for p in sorted(first.glob("*.csv"))}
        b = {p.name: p.read_bytes() for p in sorted(second.glob("*.csv"))}
        if codes[0] not in (0, 3) or codes[0] != codes[1] or not a or a != b:
            mismatched.append(name)
    dt = time.perf_counter() - t0
    ok = not mismatched
    report(10, ok, f"{len(C10_CONFIGS) - len(mismatched)}/{len(C10_CONFIGS)} commands byte-identical "
                   f"on manifest rerun with --workers 1 then 2"
                   + (f"; mismatched {mismatched}" if mismatched else "") + f"; {dt:.1f} s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
