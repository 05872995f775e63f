"""Shared test helpers: the central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from spxseg.tensor import Tensor

FD_STEP = 1e-3
FD_TOL = 1e-4


def weighted_sum(t: Tensor, w: np.ndarray) -> Tensor:
    """Scalar probe node: sum(t * w), so fd checks can target any op."""
    out = Tensor(np.float64((t.data * w).sum()))
    out._parents = (t,)
    out._backward = lambda: t.accumulate_grad(w * float(out.grad))
    return out


def _head_relu_margin(head, x: np.ndarray) -> float:
    """Smallest |pre-activation| at any relu in a head forward pass.

    Finite-difference probes sit astride the relu kink when this margin
    falls under the step size, so fd cases are drawn until it's safe.
    """

    def lin(name, v):
        layer = head.layer(name)
        return v @ layer.weight.data + layer.bias.data

    margin = np.inf
    if head.config.variant == "fc":
        h = lin("head.fc6", x)
        margin = min(margin, np.abs(h).min())
        h = lin("head.fc7", np.maximum(h, 0.0))
        margin = min(margin, np.abs(h).min())
    else:
        h = x
        for b in (1, 2, 3):
            a = lin(f"head.block{b}.conv_a", h)
            margin = min(margin, np.abs(a).min())
            bb = lin(f"head.block{b}.conv_b", np.maximum(a, 0.0))
            margin = min(margin, np.abs(bb).min())
            c = lin(f"head.block{b}.conv_c", np.maximum(bb, 0.0))
            shortcut = lin("head.block1.proj", h) if b == 1 else h
            s = c + shortcut
            margin = min(margin, np.abs(s).min())
            h = np.maximum(s, 0.0)
    return float(margin)


def kink_free_head_case(variant: str, n_samples: int = 5, input_dim: int = 12,
                        n_classes: int = 3, start_seed: int = 0):
    """Head + inputs whose relu pre-activations stay clear of fd steps."""
    from spxseg.heads import HeadConfig, SegHead

    for seed in range(start_seed, start_seed + 300):
        rng = np.random.default_rng(seed)
        cfg = HeadConfig(variant, n_classes=n_classes, input_dim=input_dim, width_factor=1 / 128)
        head = SegHead(cfg, seed=seed)
        x = rng.normal(size=(n_samples, input_dim))
        if _head_relu_margin(head, x) > 10 * FD_STEP:
            labels = rng.integers(0, n_classes, size=n_samples)
            return head, Tensor(x), labels
    raise RuntimeError(f"no kink-free {variant} head case found")


def fd_gradient_check(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    rng: np.random.Generator,
    n_probes: int = 50,
    step: float = FD_STEP,
    tol: float = FD_TOL,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``build_loss`` recomputes a scalar loss from the live ``params``
    tensors. Probes pick random parameter entries; the relative error
    guard keeps near-zero gradients from inflating the ratio.

    Returns the worst relative error seen (and asserts it under ``tol``).
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for _ in range(n_probes):
        pi = int(rng.integers(len(params)))
        t = params[pi]
        idx = tuple(int(rng.integers(s)) for s in t.data.shape)
        original = t.data[idx]
        t.data[idx] = original + step
        f_plus = float(build_loss().data)
        t.data[idx] = original - step
        f_minus = float(build_loss().data)
        t.data[idx] = original
        numeric = (f_plus - f_minus) / (2 * step)
        a = analytic[pi][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
        worst = max(worst, err)
        assert err < tol, (
            f"gradient mismatch at param {pi} index {idx}: "
            f"analytic {a:.8g} vs numeric {numeric:.8g} (rel err {err:.3g})"
        )
    return worst
