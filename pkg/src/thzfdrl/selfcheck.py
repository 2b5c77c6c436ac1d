"""Numerical self-tests behind ``thzfdrl check``.

Each check compares a production code path against an independent route:
central finite differences for backprop, explicit real arithmetic for the
SINR, and the leakage of zero-forcing beams.
"""

from __future__ import annotations

import numpy as np

from . import baselines, nn
from .channel import ChannelParams
from .env import NetworkScenario, dbm_to_watt, generate_scenario, rate, sinr_all

FD_STEP = 1e-5


def _scalar_objective(net, x, upstream):
    return float(np.sum(net.forward(x) * upstream))


def finite_difference_errors(net: nn.Mlp, x, upstream, h: float = FD_STEP):
    """Max relative error of ``net.backward`` against central differences.

    Returns ``(param_err, input_err)``. Relative error uses
    ``max(|analytic|, |numeric|, 1e-8)`` as the denominator.
    """
    x = np.asarray(x, dtype=float)
    grads = net.backward(x, upstream)

    def rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), 1e-8)

    worst_p = 0.0
    for p, g in zip(net.params, grads.params):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = _scalar_objective(net, x, upstream)
            flat[i] = keep - h
            down = _scalar_objective(net, x, upstream)
            flat[i] = keep
            worst_p = max(worst_p, rel(gflat[i], (up - down) / (2 * h)))
    worst_x = 0.0
    xf = x.reshape(-1)
    gx = grads.input.reshape(-1)
    for i in range(xf.size):
        keep = xf[i]
        xf[i] = keep + h
        up = _scalar_objective(net, x, upstream)
        xf[i] = keep - h
        down = _scalar_objective(net, x, upstream)
        xf[i] = keep
        worst_x = max(worst_x, rel(gx[i], (up - down) / (2 * h)))
    return worst_p, worst_x


def brute_force_sinr(scenario: NetworkScenario, beams) -> np.ndarray:
    """SINR from explicit real/imaginary sums, no complex BLAS."""
    K, N = scenario.K, scenario.N
    H = scenario.channels
    W = np.asarray(beams, dtype=complex)

    def gain(h, w):
        re = im = 0.0
        for n in range(N):
            # conj(h) * w
            re += h[n].real * w[n].real + h[n].imag * w[n].imag
            im += h[n].real * w[n].imag - h[n].imag * w[n].real
        return re * re + im * im

    out = np.zeros(K)
    for k in range(K):
        interf = sum(scenario.tx_power_w * gain(H[j, k], W[j]) for j in range(K) if j != k)
        out[k] = scenario.tx_power_w * gain(H[k, k], W[k]) / (interf + scenario.noise_w)
    return out


def random_scenario(rng, K, N):
    return generate_scenario(rng, K, N, (10.0, 100.0), ChannelParams(num_antennas=N),
                             dbm_to_watt(10.0), dbm_to_watt(-74.0))


def random_unit_beams(rng, K, N):
    return baselines.random_beams(rng, K, N) * rng.uniform(0.2, 1.0, size=(K, 1))


def check_gradients(rng, n_nets=20, max_layers=3, max_width=50, tol=1e-4):
    worst = 0.0
    for _ in range(n_nets):
        n_layers = int(rng.integers(1, max_layers + 1))
        sizes = [int(s) for s in rng.integers(1, max_width + 1, size=n_layers + 1)]
        net = nn.Mlp(sizes, str(rng.choice(nn.ACTIVATIONS)), rng)
        x = rng.normal(size=sizes[0])
        up = rng.normal(size=sizes[-1])
        worst = max(worst, *finite_difference_errors(net, x, up))
    return bool(worst < tol), f"max relative error {worst:.3g} over {n_nets} networks"


def check_sinr(rng, n_instances=100, tol=1e-12):
    worst = 0.0
    for _ in range(n_instances):
        K = int(rng.integers(1, 5))
        N = int(rng.integers(1, 9))
        sc = random_scenario(rng, K, N)
        W = random_unit_beams(rng, K, N)
        fast = sinr_all(sc, W)
        slow = brute_force_sinr(sc, W)
        worst = max(worst, float(np.max(np.abs(fast - slow) / np.maximum(np.abs(slow), 1e-300))))
    exact = rate(1.0) == 1.0 and rate(3.0) == 2.0
    return bool(worst < tol and exact), f"max relative error {worst:.3g}; log2 exact: {exact}"


def check_zf(rng, n_instances=50, tol=1e-20):
    worst = 0.0
    for _ in range(n_instances):
        K = int(rng.integers(1, 5))
        N = int(rng.integers(K, 9))
        sc = random_scenario(rng, K, N)
        W = baselines.zf_beamformers(sc.channels)
        for k in range(K):
            for j in range(K):
                if j != k:
                    h = sc.channels[k, j]
                    worst = max(worst, abs(np.vdot(h, W[k])) ** 2 / np.vdot(h, h).real)
    return bool(worst < tol), f"worst leakage ratio {worst:.3g}"


def check_units():
    ok = dbm_to_watt(10.0) == 0.01 and dbm_to_watt(-74.0) == 10.0 ** -10.4
    return bool(ok), f"10 dBm -> {dbm_to_watt(10.0)!r} W, -74 dBm -> {dbm_to_watt(-74.0)!r} W"


def run_checks(seed: int = 0):
    rng = np.random.default_rng(seed)
    return [
        ("gradients", *check_gradients(rng)),
        ("sinr", *check_sinr(rng)),
        ("zero-forcing", *check_zf(rng)),
        ("units", *check_units()),
    ]
