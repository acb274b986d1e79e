"""Built-in invariant suite behind the ``verify`` command: fast end-to-end
checks of the load-bearing numerical contracts, each with an independent
reference path.
"""

from __future__ import annotations

import numpy as np

from . import freeflyer, mlp, ppo, sdnn
from .freeflyer import Action, FlyerParams, FlyerState
from .mathcore import SeededRng, quat_normalize, quat_rotate


def check_sigma_delta_exactness() -> tuple[bool, str]:
    """Cumulative SDNN output at threshold 0 equals the ANN forward pass."""
    rng = SeededRng(101)
    worst = 0.0
    for _ in range(10):
        actor = mlp.init_dense([12, 64, 64, 6], rng, out_gain=1.0)
        for b in actor.biases:
            b += 0.1 * rng.normal(b.shape)
        net = sdnn.convert(actor, thresholds=0.0, mode="float")
        stream = 0.05 * rng.normal((50, 12)).cumsum(axis=0)
        for x in stream:
            out = sdnn.sdnn_step(net, x)
            ref, _ = mlp.forward(actor, x)
            worst = max(worst, float(np.abs(out - ref).max()))
    return worst < 1e-5, f"max |sdnn - ann| = {worst:.2e} (tol 1e-5)"


def check_reconstruction_bound() -> tuple[bool, str]:
    """Every delta/sigma pair reconstructs within its threshold."""
    rng = SeededRng(102)
    worst_margin = np.inf
    for theta in (0.01, 0.1, 1.0):
        delta = sdnn.DeltaState(np.zeros(16), theta)
        sigma = sdnn.SigmaState(np.zeros(16))
        x = np.zeros(16)
        for _ in range(400):
            x = x + 0.3 * rng.normal(16)
            rec = sdnn.sigma_decode(sigma, sdnn.delta_encode(delta, x))
            worst_margin = min(worst_margin, theta - float(np.abs(rec - x).max()))
    return worst_margin > 0.0, f"min (theta - |x_rec - x|) = {worst_margin:.2e} (must be > 0)"


def check_gae_equivalence() -> tuple[bool, str]:
    """Backward recursion equals the explicit discounted sum of TD residuals."""
    rng = SeededRng(103)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 17))
        rewards = rng.normal((1, n))
        values = rng.normal((1, n))
        dones = rng.uniform(size=(1, n)) < 0.2
        bootstrap = rng.normal((1,))
        gamma, lam = 0.93, 0.9
        batch = ppo.RolloutBatch(
            obs=np.zeros((1, n, 12)),
            actions=np.zeros((1, n, 6)),
            log_probs=np.zeros((1, n)),
            rewards=rewards,
            values=values,
            dones=dones,
            bootstrap_values=bootstrap,
        )
        adv = ppo.compute_gae(batch, gamma, lam).advantages[0]
        nxt = np.append(values[0, 1:], bootstrap[0])
        delta = rewards[0] + gamma * nxt * ~dones[0] - values[0]
        for t in range(n):
            total, factor = 0.0, 1.0
            for l in range(t, n):
                total += factor * delta[l]
                if dones[0, l]:
                    break
                factor *= gamma * lam
            worst = max(worst, abs(total - adv[t]))
    return worst <= 1e-12, f"max |recursion - explicit sum| = {worst:.2e} (tol 1e-12)"


def check_gradients() -> tuple[bool, str]:
    """Analytic backprop against central finite differences."""
    rng = SeededRng(104)
    h = 1e-5
    for _ in range(10):
        dims = [int(rng.integers(2, 6)) for _ in range(3)] + [int(rng.integers(1, 4))]
        net = mlp.init_dense(dims, rng, out_gain=1.0)
        for b in net.biases:
            b += 0.3 * rng.normal(b.shape)  # keep pre-activations off the ReLU kink
        x = rng.normal((3, dims[0]))
        g_out = rng.normal((3, dims[-1]))
        _, cache = mlp.forward(net, x)
        grads = mlp.backward(net, cache, g_out)
        for li, (w, dw) in enumerate(zip(net.weights, grads.d_weights)):
            flat_idx = int(rng.integers(0, w.size))
            i, j = np.unravel_index(flat_idx, w.shape)
            w[i, j] += h
            up = float((mlp.forward(net, x)[0] * g_out).sum())
            w[i, j] -= 2 * h
            dn = float((mlp.forward(net, x)[0] * g_out).sum())
            w[i, j] += h
            fd = (up - dn) / (2 * h)
            if abs(fd - dw[i, j]) > max(1e-6, 1e-4 * abs(fd)):
                return False, f"layer {li} grad mismatch: analytic {dw[i, j]}, fd {fd}"
    return True, "spot-checked weight partials match central differences"


def check_conservation() -> tuple[bool, str]:
    """Free drift conserves momentum and unit quaternion norm."""
    rng = SeededRng(105)
    params = FlyerParams()
    inertia = params.inertia
    worst_l, worst_q, worst_p = 0.0, 0.0, 0.0
    for _ in range(5):
        state = FlyerState(
            np.zeros(3),
            quat_normalize(rng.normal(4)),
            0.1 * rng.normal(3),
            0.3 * rng.normal(3),
        )
        l0 = quat_rotate(state.orientation, inertia * state.ang_vel)
        p0 = params.mass * state.lin_vel
        for _ in range(params.episode_len):
            state = freeflyer.step(state, Action(np.zeros(3), np.zeros(3)), params)
            worst_q = max(worst_q, abs(float(np.linalg.norm(state.orientation)) - 1.0))
        l1 = quat_rotate(state.orientation, inertia * state.ang_vel)
        worst_l = max(worst_l, float(np.linalg.norm(l1 - l0) / np.linalg.norm(l0)))
        worst_p = max(worst_p, float(np.abs(params.mass * state.lin_vel - p0).max()))
    ok = worst_l < 1e-6 and worst_q < 1e-9 and worst_p == 0.0
    return ok, f"ang mom drift {worst_l:.2e} (tol 1e-6), |q|-1 {worst_q:.2e}, lin mom {worst_p:.2e}"


def check_determinism() -> tuple[bool, str]:
    """Equal seeds give equal streams; quantization is monotone and symmetric."""
    a, b = SeededRng(7), SeededRng(7)
    if not np.array_equal(a.normal(10000), b.normal(10000)):
        return False, "identical seeds produced different streams"
    from .mathcore import QuantSpec, quantize

    spec = QuantSpec(scale=4096.0, magnitude_bits=24)
    xs = SeededRng(8).uniform(-5, 5, 1000)
    q = quantize(np.sort(xs), spec)
    if np.any(np.diff(q) < 0):
        return False, "quantize is not monotone"
    if np.any(quantize(-xs, spec) != -quantize(xs, spec)):
        return False, "quantize is not symmetric about zero"
    return True, "rng streams reproduce; quantizer monotone and symmetric"


ALL_CHECKS = [
    ("sigma_delta_exactness", check_sigma_delta_exactness),
    ("reconstruction_bound", check_reconstruction_bound),
    ("gae_equivalence", check_gae_equivalence),
    ("gradient_correctness", check_gradients),
    ("dynamics_conservation", check_conservation),
    ("determinism", check_determinism),
]


def run_all(report=print) -> bool:
    all_ok = True
    for name, fn in ALL_CHECKS:
        ok, detail = fn()
        all_ok &= ok
        report(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
