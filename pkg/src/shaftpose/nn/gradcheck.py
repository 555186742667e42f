"""Central finite-difference gradient verification.

The harness perturbs every (or a sampled subset of) input component at
double precision and compares against analytic gradients. Op-level
checks build tiny layers on random shapes; the end-to-end detector
checks live in ``shaftpose.detector.gradsuite`` and reuse this harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .losses import smooth_l1, smooth_l1_grad, softmax_cross_entropy

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3


def relative_error(a: float, f: float) -> float:
    denom = max(abs(a), abs(f), 1e-6)
    return abs(a - f) / denom


def grad_check(
    computation: Callable[[list[np.ndarray]], tuple[float, list[np.ndarray]]],
    inputs: list[np.ndarray],
    h: float = 1e-5,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between analytic and central-difference grads.

    ``computation`` maps the list of float64 arrays to (scalar loss,
    gradient per input). With ``sample`` set, only that many randomly
    chosen components per input are perturbed (for large end-to-end
    checks); otherwise every component is.
    """
    _, grads = computation(inputs)
    worst = 0.0
    for x, g in zip(inputs, grads):
        flat = x.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        if sample is not None and flat.size > sample:
            if rng is None:
                raise ValueError("sampled grad_check needs an rng")
            idxs = rng.choice(flat.size, size=sample, replace=False)
        else:
            idxs = np.arange(flat.size)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = computation(inputs)
            flat[i] = orig - h
            lm, _ = computation(inputs)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            worst = max(worst, relative_error(float(gflat[i]), fd))
    return worst


@dataclass
class OpCheckResult:
    op: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _projected_scalar_check(layer, x_shapes: list[tuple], rng: np.random.Generator,
                            multi_input: bool = False) -> float:
    """Check d(sum(y * R))/d(inputs and params) for a layer instance."""
    xs = [rng.standard_normal(s) for s in x_shapes]
    y = layer.forward(xs if multi_input else xs[0], train=True)
    r = rng.standard_normal(y.shape) / y.size

    params = layer.params()

    def computation(inputs):
        k = len(xs)
        cur = inputs[:k]
        for p, val in zip(params, inputs[k:]):
            p.value = val
        out = layer.forward(cur if multi_input else cur[0], train=True)
        loss = float((out * r).sum())
        for p in params:
            p.zero_grad()
        gx = layer.backward(r.astype(out.dtype))
        gxs = list(gx) if multi_input else [gx]
        return loss, gxs + [p.grad.copy() for p in params]

    inputs = xs + [p.value.copy() for p in params]
    return grad_check(computation, inputs)


def _nudge_from(x: np.ndarray, points, margin: float = 1e-3) -> np.ndarray:
    """Push values away from non-differentiable points for FD stability."""
    for p in points:
        close = np.abs(x - p) < margin
        x = np.where(close, p + margin * np.where(x >= p, 1.0, -1.0), x)
    return x


def check_conv2d(rng, ksize=3, stride=1) -> float:
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h = int(rng.integers(2, 4)) * 2
    layer = ops.Conv2d("op", cin, cout, ksize, stride, rng, dtype=np.float64)
    return _projected_scalar_check(layer, [(2, h, h, cin)], rng)


def check_dense(rng) -> float:
    fin, fout = int(rng.integers(2, 8)), int(rng.integers(2, 6))
    layer = ops.Dense("op", fin, fout, rng, dtype=np.float64)
    return _projected_scalar_check(layer, [(4, fin)], rng)


def check_relu(rng) -> float:
    layer = ops.ReLU()
    x = _nudge_from(rng.standard_normal((3, 4, 4, 2)), [0.0])
    r = rng.standard_normal(x.shape) / x.size

    def computation(inputs):
        y = layer.forward(inputs[0], train=True)
        return float((y * r).sum()), [layer.backward(r)]

    return grad_check(computation, [x])


def check_tanh(rng) -> float:
    layer = ops.Tanh()
    return _projected_scalar_check(layer, [(3, 5)], rng)


def check_batchnorm(rng) -> float:
    c = int(rng.integers(1, 4))
    layer = ops.BatchNorm("op", c, dtype=np.float64)
    layer.gamma.value = rng.uniform(0.5, 1.5, c)
    layer.beta.value = rng.standard_normal(c)
    return _projected_scalar_check(layer, [(3, 4, 4, c)], rng)


def check_maxpool2(rng) -> float:
    layer = ops.MaxPool2()
    return _projected_scalar_check(layer, [(2, 4, 4, 3)], rng)


def check_concat_channels(rng) -> float:
    layer = ops.ConcatChannels()
    return _projected_scalar_check(layer, [(2, 3, 3, 2), (2, 3, 3, 3)], rng, multi_input=True)


def check_softmax_cross_entropy(rng) -> float:
    n = 8
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), rng.integers(0, 2, n)] = 1.0
    weights = rng.uniform(0.2, 1.0, n)
    logits = rng.standard_normal((n, 2))

    def computation(inputs):
        losses, probs = softmax_cross_entropy(inputs[0], onehot)
        return float(losses @ weights), [(probs - onehot) * weights[:, None]]

    return grad_check(computation, [logits])


def check_smooth_l1(rng) -> float:
    x = _nudge_from(rng.uniform(-3, 3, 24), [-1.0, 1.0])
    r = rng.uniform(0.2, 1.0, x.shape)

    def computation(inputs):
        return float((smooth_l1(inputs[0]) * r).sum()), [smooth_l1_grad(inputs[0]) * r]

    return grad_check(computation, [x])


NN_OP_CHECKS: list[tuple[str, Callable]] = [
    ("conv2d_3x3_s1", lambda rng: check_conv2d(rng, 3, 1)),
    ("conv2d_3x3_s2", lambda rng: check_conv2d(rng, 3, 2)),
    ("conv2d_1x1_s1", lambda rng: check_conv2d(rng, 1, 1)),
    ("dense", check_dense),
    ("relu", check_relu),
    ("tanh", check_tanh),
    ("batchnorm", check_batchnorm),
    ("maxpool2", check_maxpool2),
    ("concat_channels", check_concat_channels),
    ("softmax_cross_entropy", check_softmax_cross_entropy),
    ("smooth_l1", check_smooth_l1),
]


def run_nn_op_suite(trials: int = 3, seed: int = 0) -> list[OpCheckResult]:
    """Run every registered op check over ``trials`` random shapes each."""
    results = []
    for name, fn in NN_OP_CHECKS:
        rng = np.random.default_rng(seed)
        worst = max(fn(rng) for _ in range(trials))
        results.append(OpCheckResult(op=name, max_rel_err=worst, tolerance=OP_TOLERANCE))
    return results
