"""Finite-difference verification of every backward rule.

The oracle is deliberately independent of the autodiff engine: each op and
the full network wiring are re-implemented here as plain float64 numpy
functions, and central differences of those reference forwards are compared
against the engine's analytic float32 gradients.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tape, Tensor
from .nets import (
    BN_EPS,
    NetConfig,
    NetParams,
    classifier_config,
    discriminator_config,
    generator_config,
    init_params,
    mlp_forward,
)

FD_STEP = 1e-3
REL_TOL = 1e-3


# ---------------------------------------------------------------------------
# float64 reference forwards (no autodiff imports beyond configs)


def ref_leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def ref_batchnorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def ref_softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(lse - shifted[np.arange(len(labels)), labels]))


def ref_mlp(config: NetConfig, arrays: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    h = x.astype(np.float64)
    n_hidden = len(config.hidden_dims)
    if n_hidden == 0 and config.final_activation == "leaky_then_linear":
        h = ref_leaky_relu(h, config.leaky_slope)
    for i in range(n_hidden):
        h = h @ arrays[f"layers.{i}.weight"] + arrays[f"layers.{i}.bias"]
        if config.use_batchnorm:
            h = ref_batchnorm(h, arrays[f"layers.{i}.gamma"], arrays[f"layers.{i}.beta"], BN_EPS)
        h = ref_leaky_relu(h, config.leaky_slope)
    last = n_hidden
    return h @ arrays[f"layers.{last}.weight"] + arrays[f"layers.{last}.bias"]


def finite_difference(
    f: Callable[[dict[str, np.ndarray]], float],
    arrays: dict[str, np.ndarray],
    name: str,
    h: float = FD_STEP,
) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arrays[name]``, in float64."""
    base = arrays[name]
    grad = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = f(arrays)
        flat[i] = saved - h
        down = f(arrays)
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    """Entrywise |a - r| / max(|a|, |r|, 1e-3); the floor turns the bound
    into an absolute one for near-zero gradients."""
    a = analytic.astype(np.float64)
    r = reference.astype(np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(r)), 1e-3)
    return float((np.abs(a - r) / denom).max())


@dataclass
class CheckResult:
    name: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= REL_TOL


def _compare(
    name: str,
    engine_loss: Callable[[], Tensor],
    ref_loss: Callable[[dict[str, np.ndarray]], float],
    tensors: dict[str, Tensor],
) -> CheckResult:
    """Backward through the engine once, then finite-difference every input."""
    for t in tensors.values():
        t.zero_grad()
    with Tape() as tape:
        loss = engine_loss()
    tape.backward(loss)
    arrays = {k: t.data.astype(np.float64) for k, t in tensors.items()}
    worst = 0.0
    for key, t in tensors.items():
        fd = finite_difference(ref_loss, arrays, key)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_relative_error(analytic, fd))
    return CheckResult(name, worst)


def _param_tensors(prefix: str, params: NetParams) -> dict[str, Tensor]:
    return {f"{prefix}{name}": t for name, t in params.named_tensors()}


def check_matmul(rng: Rng, m: int, k: int, n: int) -> CheckResult:
    a = Tensor(rng.normal((m, k)), requires_grad=True)
    b = Tensor(rng.normal((k, n)), requires_grad=True)
    return _compare(
        f"matmul {m}x{k}·{k}x{n}",
        lambda: ad.mean_all(ad.matmul(a, b)),
        lambda arr: float((arr["a"] @ arr["b"]).mean()),
        {"a": a, "b": b},
    )


def check_add_bias(rng: Rng, m: int, n: int) -> CheckResult:
    a = Tensor(rng.normal((m, n)), requires_grad=True)
    b = Tensor(rng.normal((n,)), requires_grad=True)
    return _compare(
        f"add bias {m}x{n}",
        lambda: ad.sum_all(ad.add(a, b)),
        lambda arr: float((arr["a"] + arr["b"]).sum()),
        {"a": a, "b": b},
    )


def check_mul(rng: Rng, m: int, n: int) -> CheckResult:
    a = Tensor(rng.normal((m, n)), requires_grad=True)
    b = Tensor(rng.normal((m, n)), requires_grad=True)
    return _compare(
        f"mul {m}x{n}",
        lambda: ad.mean_all(ad.mul(a, b)),
        lambda arr: float((arr["a"] * arr["b"]).mean()),
        {"a": a, "b": b},
    )


def check_leaky_relu(rng: Rng, m: int, n: int, slope: float = 0.2) -> CheckResult:
    x = Tensor(rng.normal((m, n)), requires_grad=True)
    return _compare(
        f"leaky_relu {m}x{n}",
        lambda: ad.sum_all(ad.leaky_relu(x, slope)),
        lambda arr: float(ref_leaky_relu(arr["x"], slope).sum()),
        {"x": x},
    )


def check_concat(rng: Rng, m: int, p: int, q: int) -> CheckResult:
    a = Tensor(rng.normal((m, p)), requires_grad=True)
    b = Tensor(rng.normal((m, q)), requires_grad=True)
    w = Tensor(rng.normal((p + q, 3)), requires_grad=False)
    return _compare(
        f"concat_cols {m}x{p}|{q}",
        lambda: ad.mean_all(ad.matmul(ad.concat_cols(a, b), w)),
        lambda arr: float((np.concatenate([arr["a"], arr["b"]], axis=1) @ w.data).mean()),
        {"a": a, "b": b},
    )


def check_batchnorm(rng: Rng, m: int, n: int) -> CheckResult:
    x = Tensor(rng.normal((m, n)), requires_grad=True)
    gamma = Tensor(1.0 + 0.1 * rng.normal((n,)), requires_grad=True)
    beta = Tensor(0.1 * rng.normal((n,)), requires_grad=True)
    # A random weighting breaks the invariances of standardized outputs
    # (per-column mean and sum of squares are constants), and the square
    # keeps the loss nonlinear in them.
    r = Tensor(rng.normal((m, n)), requires_grad=False)

    def engine_loss():
        h = ad.mul(ad.batchnorm(x, gamma, beta, BN_EPS), r)
        return ad.mean_all(ad.mul(h, h))

    def ref_loss(arr):
        h = ref_batchnorm(arr["x"], arr["gamma"], arr["beta"], BN_EPS) * r.data
        return float((h**2).mean())

    return _compare(
        f"batchnorm {m}x{n}", engine_loss, ref_loss, {"x": x, "gamma": gamma, "beta": beta}
    )


def check_softmax_ce(rng: Rng, b: int, k: int) -> CheckResult:
    logits = Tensor(rng.normal((b, k)), requires_grad=True)
    labels = np.asarray(rng.integers(0, k, size=b))
    return _compare(
        f"softmax_cross_entropy {b}x{k}",
        lambda: ad.softmax_cross_entropy(logits, labels),
        lambda arr: ref_softmax_cross_entropy(arr["logits"], labels),
        {"logits": logits},
    )


def _net_check(name: str, config: NetConfig, rng: Rng, batch: int, ce_labels=None) -> CheckResult:
    """Full-network gradient check, dropout off, optional cross-entropy head."""
    params = init_params(config, rng)
    x = Tensor(rng.normal((batch, config.input_dim)), requires_grad=False)
    tensors = _param_tensors("", params)
    quiet = Rng(0)  # dropout disabled; never consulted

    if ce_labels is None:
        engine_loss = lambda: ad.mean_all(
            ad.mul(out := mlp_forward(params, x, False, quiet), out)
        )
        ref_loss = lambda arr: float((ref_mlp(config, arr, x.data) ** 2).mean())
    else:
        engine_loss = lambda: ad.softmax_cross_entropy(
            mlp_forward(params, x, False, quiet), ce_labels
        )
        ref_loss = lambda arr: ref_softmax_cross_entropy(
            ref_mlp(config, arr, x.data), ce_labels
        )
    return _compare(name, engine_loss, ref_loss, tensors)


def _dims(rng: Rng, lo: int = 2, hi: int = 6) -> int:
    return int(rng.integers(lo, hi + 1))


def run_suite(seed: int = 0, n_configs: int = 20) -> list[CheckResult]:
    """Finite-difference checks for every op and the three trained networks,
    each over ``n_configs`` random shapes. Dropout is off throughout (its
    mask is not differentiable state)."""
    results: list[CheckResult] = []
    for i in range(n_configs):
        rng = Rng(seed * 10_000 + i)
        results.append(check_matmul(rng, _dims(rng), _dims(rng), _dims(rng)))
        results.append(check_add_bias(rng, _dims(rng), _dims(rng)))
        results.append(check_mul(rng, _dims(rng), _dims(rng)))
        results.append(check_leaky_relu(rng, _dims(rng), _dims(rng)))
        results.append(check_concat(rng, _dims(rng), _dims(rng), _dims(rng)))
        results.append(check_batchnorm(rng, _dims(rng, 3, 8), _dims(rng)))
        results.append(check_softmax_ce(rng, _dims(rng, 2, 6), _dims(rng, 3, 6)))

        noise_dim, attr_dim, feat_dim = _dims(rng), _dims(rng), _dims(rng, 3, 6)
        n_classes = _dims(rng, 3, 6)
        batch = _dims(rng, 3, 6)
        g_cfg = generator_config(noise_dim, attr_dim, feat_dim, hidden=(_dims(rng), _dims(rng)))
        d_cfg = discriminator_config(
            feat_dim, attr_dim, hidden=(_dims(rng), _dims(rng), _dims(rng))
        )
        c_cfg = classifier_config(feat_dim, n_classes, hidden=(_dims(rng), _dims(rng)))
        labels = np.asarray(rng.integers(0, n_classes, size=batch))
        results.append(_net_check(f"generator net #{i}", g_cfg, rng, batch))
        results.append(_net_check(f"critic net #{i}", d_cfg, rng, batch))
        results.append(_net_check(f"classifier net #{i}", c_cfg, rng, batch, ce_labels=labels))
    return results


@contextmanager
def corrupted_backward():
    """Swap in a deliberately wrong leaky_relu backward rule, to verify that
    the suite actually detects broken gradients."""
    original = ad._leaky_relu_bwd

    def wrong(g, mask, slope):
        return original(g, mask, slope + 0.2)

    ad._leaky_relu_bwd = wrong
    try:
        yield
    finally:
        ad._leaky_relu_bwd = original
