"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Stochastic trend checks run at the stated scale (K=3, N=8, E=300, paired
seeds). Batches shared between criteria are computed once per module.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from thzfdrl import agent as ag
from thzfdrl import cli
from thzfdrl import experiment as ex
from thzfdrl import federation as fed
from thzfdrl.env import dbm_to_watt
from thzfdrl.selfcheck import check_gradients, check_sinr, check_zf

BASE = ex.ExperimentConfig(K=3, N=8, epochs=300, monte_carlo_runs=20, seed=0)


def report(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def sign_test_p(wins, n):
    """One-sided P(Bin(n, 1/2) >= wins)."""
    return sum(math.comb(n, i) for i in range(wins, n + 1)) / 2 ** n


@pytest.fixture(scope="module")
def fdrl_full():
    return ex.run_monte_carlo(BASE)


@pytest.fixture(scope="module")
def local_ddpg():
    return ex.run_monte_carlo(replace(BASE, method="ddpg-local"))


def test_c01_gradient_correctness():
    (ok, detail), dt = timed(check_gradients, np.random.default_rng(2024))
    report(1, ok and dt < 10, f"{detail}; {dt:.2f} s (limit 10 s)")


def test_c02_sinr_rate_oracle():
    ok, detail = check_sinr(np.random.default_rng(2025))
    report(2, ok, detail)


def test_c03_single_cell_optimality():
    cfg = replace(BASE, K=1, method="ddpg-local", monte_carlo_runs=10)
    t0 = time.perf_counter()
    hits = 0
    ratios = []
    for seq in ex.run_seeds(cfg.seed, cfg.monte_carlo_runs):
        scen_seq, algo_seq = seq.spawn(2)
        sc = ex._scenario_for(cfg, scen_seq)
        h = sc.serving(0)
        mrt = math.log2(1 + sc.tx_power_w * np.vdot(h, h).real / sc.noise_w)
        r = ex.run_algorithm1(cfg, sc, algo_seq)
        ratios.append(r.final_throughput / mrt)
        hits += ratios[-1] >= 0.9
    dt = time.perf_counter() - t0
    report(3, hits >= 8 and dt < 120,
           f"{hits}/10 runs reach 90% of MRT (min ratio {min(ratios):.3f}); {dt:.1f} s (limit 120 s)")


def test_c04_zf_null_depth():
    ok, detail = check_zf(np.random.default_rng(2026))
    report(4, ok, detail)


def test_c05_federation_algebra():
    mean = fed.aggregate([fed.full_package(0, [1.0, 2.0]), fed.full_package(1, [3.0, 4.0])],
                         np.zeros(2)).params
    ok_mean = mean.tolist() == [2.0, 3.0]
    r = np.random.default_rng(5)
    vecs, last = r.normal(size=(3, 50)), r.normal(size=50)
    full = fed.aggregate([fed.full_package(i, v) for i, v in enumerate(vecs)], last).params
    part = fed.aggregate([fed.select_partial(v, last, 1.0, agent_id=i) for i, v in enumerate(vecs)],
                         last).params
    ok_ratio1 = full.tobytes() == part.tobytes()
    same = fed.aggregate([fed.full_package(i, vecs[0]) for i in range(3)], last).params
    ok_fixed = same.tobytes() == vecs[0].tobytes()
    agents = [ag.make_agent(4, (10, 7), init_rng=np.random.default_rng(k), agent_id=k) for k in range(3)]
    g = fed.aggregate([fed.full_package(a.agent_id, fed.local_vector(a)) for a in agents],
                      np.zeros_like(fed.local_vector(agents[0])))
    for a in agents:
        fed.apply_global(a, g)
    ok_sync = all(a.actor == agents[0].actor and a.critic == agents[0].critic for a in agents)
    report(5, ok_mean and ok_ratio1 and ok_fixed and ok_sync,
           f"mean [1,2],[3,4] -> {mean.tolist()}; ratio-1 partial == full: {ok_ratio1}; "
           f"fixed point: {ok_fixed}; synced mains identical: {ok_sync}")


def test_c06_antenna_trend(fdrl_full):
    t0 = time.perf_counter()
    zf = ex.sweep(replace(BASE, method="zf"), "antennas", [8, 16, 32])
    zf_means = [mc.mean for _, mc in zf]
    zf_ok = all(b > a for a, b in zip(zf_means, zf_means[1:]))
    n16 = ex.run_monte_carlo(replace(BASE, N=16))
    wins = int(np.sum(n16.finals > fdrl_full.finals))
    dt = time.perf_counter() - t0
    report(6, zf_ok and wins >= 14 and dt < 600,
           "ZF mean over N=8,16,32: " + ", ".join(f"{m:.4g}" for m in zf_means)
           + f" (strictly increasing: {zf_ok}); FDRL N=16 > N=8 in {wins}/20 paired runs "
           f"(need 14); {dt:.0f} s")


def test_c07_distance_trend():
    ratios = {}
    for method in ex.METHODS:
        near, far = ex.sweep(replace(BASE, method=method), "distance", [10.0, 100.0])
        ratios[method] = far[1].mean / near[1].mean if near[1].mean > 0 else math.inf
    ok = all(r < 0.25 for r in ratios.values())
    report(7, ok, "throughput(100 m)/throughput(10 m): "
           + ", ".join(f"{m} {r:.2e}" for m, r in ratios.items()))


def _federation_benefit(fdrl, local):
    diff = fdrl.finals - local.finals
    wins, losses = int(np.sum(diff > 0)), int(np.sum(diff < 0))
    p = sign_test_p(wins, wins + losses) if wins + losses else 1.0
    return fdrl.mean >= local.mean and p < 0.1, (
        f"FDRL mean {fdrl.mean:.4g} vs local {local.mean:.4g}; wins {wins}/{wins + losses}, "
        f"sign-test p={p:.3g}")


def test_c08_federation_benefit(fdrl_full, local_ddpg):
    ok, detail = _federation_benefit(fdrl_full, local_ddpg)
    if not ok:
        rerun = replace(BASE, monte_carlo_runs=40, seed=BASE.seed + 1)
        ok, detail2 = _federation_benefit(ex.run_monte_carlo(rerun),
                                          ex.run_monte_carlo(replace(rerun, method="ddpg-local")))
        detail = f"20 seeds: {detail}; rerun 40 seeds: {detail2}"
    report(8, ok, detail)


def test_c09_partial_upload(fdrl_full):
    partial = ex.run_monte_carlo(replace(BASE, upload_ratio=0.1))
    ratio = partial.mean / fdrl_full.mean
    rounds = BASE.epochs // BASE.fed_cycle
    per_pkg_full = fdrl_full.bytes_uploaded / (rounds * BASE.K)
    per_pkg_part = partial.bytes_uploaded / (rounds * BASE.K)
    bytes_ok = abs(per_pkg_part - 0.1 * per_pkg_full) <= 8
    report(9, ratio >= 0.8 and bytes_ok,
           f"ratio-0.1 / full throughput = {ratio:.3f} (need 0.8); bytes per upload "
           f"{per_pkg_part:.0f} vs 10% of {per_pkg_full:.0f} (within one element: {bytes_ok})")


def test_c10_convergence_shape(fdrl_full):
    flat = 0
    rel = []
    for r in fdrl_full.runs[:10]:
        tail = r.sum_rate[-50:]
        rel.append(np.std(tail) / np.mean(tail))
        flat += rel[-1] < 0.2
    report(10, flat >= 7, f"{flat}/10 runs with final-50 std/mean < 0.2 "
           f"(values {', '.join(f'{x:.2f}' for x in rel)})")


def test_c11_unit_conversions():
    a, b = dbm_to_watt(10.0), dbm_to_watt(-74.0)
    report(11, a == 0.01 and b == 10.0 ** -10.4, f"10 dBm -> {a!r} W; -74 dBm -> {b!r} W")


def test_c12_determinism(tmp_path):
    argv = ["run", "--K", "3", "--N", "8", "--epochs", "60", "--monte-carlo-runs", "3", "--seed", "11"]
    assert cli.main([*argv, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*argv, "--out", str(tmp_path / "b")]) == 0
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("trace.csv", "summary.csv"))
    report(12, same, f"trace.csv and summary.csv byte-identical across two runs: {same}")
