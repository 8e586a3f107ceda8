"""Central-difference verification of the analytic gradients.

Every graph op and every loss mode is exercised on many small float64
instances; the analytic gradient from one backward pass is compared entry by
entry against (f(x+h) - f(x-h)) / 2h.  The error measure is

    max over entries of |a - b| / max(|a|, |b|, floor)

so entries where both sides are below ``floor`` are judged on an absolute
scale of floor * tolerance.  With h = 1e-5 the finite-difference noise sits
around 1e-11, far under the 1e-4 acceptance threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .nn import ops
from .nn.tensor import Tensor

DEFAULT_TOLERANCE = 1e-4
DEFAULT_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float = DEFAULT_TOLERANCE
    instances: int = 1

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(a: np.ndarray, b: np.ndarray, floor=DEFAULT_FLOOR) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def central_difference(f, x: np.ndarray, eps=1e-5) -> np.ndarray:
    """Elementwise two-sided difference of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        hi = f(x)
        flat[i] = saved - eps
        lo = f(x)
        flat[i] = saved
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def check_graph(build, arrays, *, eps=1e-5, floor=DEFAULT_FLOOR) -> float:
    """Worst relative error between backward() and finite differences.

    ``build`` maps a dict of Tensors to a scalar Tensor and must be a pure
    function of those tensors (fixed seeds for any internal randomness).
    """
    leaves = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
              for k, v in arrays.items()}
    build(leaves).backward()
    worst = 0.0
    for key in arrays:
        def scalar(x, _key=key):
            probe = {k: Tensor(np.asarray(v, dtype=np.float64)) for k, v in arrays.items()}
            probe[_key] = Tensor(x)
            return float(build(probe).data)
        fd = central_difference(scalar, arrays[key], eps=eps)
        worst = max(worst, relative_error(leaves[key].grad, fd, floor=floor))
    return worst


def _run_case(name, factory, instances, seed, tolerance) -> CheckResult:
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        build, arrays = factory(rng)
        worst = max(worst, check_graph(build, arrays))
    return CheckResult(name, worst, tolerance, instances)


def _away_from_zero(rng, shape, margin=0.1):
    """Random values with |x| >= margin, keeping relu kinks out of FD range."""
    x = rng.normal(0.0, 1.0, size=shape)
    return x + np.sign(x) * margin


def _op_cases():
    def elementwise(rng):
        arrays = {"a": _away_from_zero(rng, (1, 2, 3, 3)),
                  "b": _away_from_zero(rng, (1, 2, 3, 3))}
        build = lambda t: ops.sum_all(ops.relu(ops.add(ops.mul(t["a"], t["b"]),
                                                       ops.scale(t["a"], 0.5))))
        return build, arrays

    def conv(padding):
        def factory(rng):
            arrays = {"x": rng.normal(0.0, 1.0, (1, 2, 4, 4)),
                      "w": rng.normal(0.0, 0.5, (3, 2, 3, 3)),
                      "b": rng.normal(0.0, 0.5, (3,))}
            def build(t):
                out = ops.conv2d(t["x"], t["w"], t["b"], padding=padding)
                return ops.sum_all(ops.mul(out, out))
            return build, arrays
        return factory

    def conv_transpose(rng):
        arrays = {"x": rng.normal(0.0, 1.0, (1, 3, 3, 3)),
                  "w": rng.normal(0.0, 0.5, (3, 2, 2, 2)),
                  "b": rng.normal(0.0, 0.5, (2,))}
        def build(t):
            out = ops.conv_transpose2x2(t["x"], t["w"], t["b"])
            return ops.sum_all(ops.mul(out, out))
        return build, arrays

    def maxpool(rng):
        # distinct window entries keep the argmax stable under +-eps
        arrays = {"x": rng.permutation(2 * 4 * 4).reshape(1, 2, 4, 4) * 0.1}
        build = lambda t: ops.sum_all(ops.mul(ops.maxpool2(t["x"]), ops.maxpool2(t["x"])))
        return build, arrays

    def concat(rng):
        arrays = {"a": rng.normal(0.0, 1.0, (1, 2, 3, 3)),
                  "b": rng.normal(0.0, 1.0, (1, 2, 3, 3))}
        build = lambda t: ops.sum_all(ops.mul(ops.concat_channels(t["a"], t["b"]),
                                              ops.concat_channels(t["b"], t["a"])))
        return build, arrays

    def batchnorm(training):
        def factory(rng):
            arrays = {"x": rng.normal(0.0, 1.0, (2, 3, 4, 4)),
                      "gamma": rng.normal(1.0, 0.2, (3,)),
                      "beta": rng.normal(0.0, 0.2, (3,))}
            # a fixed linear functional of the output; sum(out^2) would be
            # nearly invariant to x (normalization removes shift and scale),
            # leaving only noise-scale gradients to compare against
            probe = rng.normal(0.0, 1.0, (2, 3, 4, 4))
            def build(t):
                out = ops.batchnorm(t["x"], t["gamma"], t["beta"],
                                    np.full(3, 0.1), np.full(3, 1.2),
                                    training=training)
                return ops.sum_all(ops.mul(out, Tensor(probe)))
            return build, arrays
        return factory

    def dropout(rng):
        mask_seed = int(rng.integers(2 ** 31))
        arrays = {"x": _away_from_zero(rng, (1, 2, 4, 4))}
        def build(t):
            out = ops.mul(ops.dropout(t["x"], 0.4, True, rng=mask_seed),
                          ops.dropout(t["x"], 0.4, True, rng=mask_seed))
            return ops.sum_all(out)
        return build, arrays

    return [
        ("add_mul_scale_relu", elementwise),
        ("conv2d_same", conv("same")),
        ("conv2d_valid", conv("valid")),
        ("conv_transpose2x2", conv_transpose),
        ("maxpool2", maxpool),
        ("concat_channels", concat),
        ("batchnorm_train", batchnorm(True)),
        ("batchnorm_eval", batchnorm(False)),
        ("dropout", dropout),
    ]


def _fused_loss_case(rng):
    """The fused loss graph node, cycling through its modes."""
    modes = [
        (losses.LossConfig(kind=losses.CCE), False),
        (losses.LossConfig(kind=losses.FCCE, membership_source=losses.FCM_FIXED,
                           entropy_weight=0.5), True),
        (losses.LossConfig(kind=losses.FCCE, membership_source=losses.PREDICTION,
                           entropy_weight=0.5), False),
        (losses.LossConfig(kind=losses.FCCE, membership_source=losses.BLEND,
                           blend_beta=0.3, entropy_weight=0.5), True),
        (losses.LossConfig(kind=losses.DSV), False),
    ]
    cfg, needs_memberships = modes[int(rng.integers(len(modes)))]
    shape = (1, 3, 4, 4)
    arrays = {"logits": rng.normal(0.0, 1.0, shape)}
    labels = rng.integers(0, 3, size=(1, 4, 4))
    onehot = np.moveaxis(np.eye(3)[labels], -1, 1)
    mem = None
    if needs_memberships:
        raw = rng.uniform(0.05, 1.0, size=shape)
        mem = raw / raw.sum(axis=1, keepdims=True)
    def build(t):
        return ops.segmentation_loss(t["logits"], onehot, cfg, fcm_memberships=mem)
    return build, arrays


def _loss_instance(rng):
    """Random logits, one-hot labels, and memberships with c in {2,4}, N in {1,16}."""
    c = int(rng.choice([2, 4]))
    n = int(rng.choice([1, 16]))
    z = rng.normal(0.0, 1.0, size=(c, n))
    y = np.eye(c)[rng.integers(0, c, size=n)].T
    raw = rng.uniform(0.05, 1.0, size=(c, n))
    return z, y, raw / raw.sum(axis=0, keepdims=True)


def _loss_cases():
    """Matrix-level losses: analytic *_grad functions against differences."""

    def cce_case(rng):
        z, y, _ = _loss_instance(rng)
        return (lambda q: losses.cce(y, losses.softmax(q)),
                lambda q: losses.cce_grad_logits(y, losses.softmax(q)), z)

    def entropy_case(rng):
        # entries stay inside (0, 1) under the +-h probes; columns need not
        # sum to 1 for the entropy itself
        c = int(rng.choice([2, 4]))
        n = int(rng.choice([1, 16]))
        u = rng.uniform(0.05, 0.95, size=(c, n))
        return losses.fuzzy_entropy, losses.fuzzy_entropy_grad, u

    def fcce_case(source, beta):
        def factory(rng):
            z, y, u = _loss_instance(rng)
            cfg = losses.LossConfig(kind=losses.FCCE, membership_source=source,
                                    blend_beta=beta, entropy_weight=0.7)
            return (lambda q: losses.fcce(y, losses.softmax(q), u, cfg),
                    lambda q: losses.fcce_grad_logits(y, losses.softmax(q), u, cfg),
                    z)
        return factory

    def dsv_case(rng):
        z, y, _ = _loss_instance(rng)
        return (lambda q: losses.deep_supervision_loss(y, losses.softmax(q)),
                lambda q: losses.deep_supervision_grad_logits(y, losses.softmax(q)),
                z)

    return [
        ("cce", cce_case),
        ("fuzzy_entropy", entropy_case),
        ("fcce_fcm_fixed", fcce_case(losses.FCM_FIXED, 0.5)),
        ("fcce_prediction", fcce_case(losses.PREDICTION, 0.5)),
        ("fcce_blend", fcce_case(losses.BLEND, 0.3)),
        ("deep_supervision", dsv_case),
    ]


def op_suite(seed=0, instances=100) -> list:
    """Gradient checks for each differentiable graph op, fused loss included."""
    cases = _op_cases() + [("segmentation_loss", _fused_loss_case)]
    return [_run_case(name, factory, instances, seed, DEFAULT_TOLERANCE)
            for name, factory in cases]


def loss_suite(seed=0, instances=100) -> list:
    """Matrix-level gradient checks for every loss function and mode."""
    results = []
    for name, factory in _loss_cases():
        worst = 0.0
        for i in range(instances):
            rng = np.random.default_rng([seed, i])
            forward, grad_fn, x = factory(rng)
            fd = central_difference(forward, x)
            worst = max(worst, relative_error(grad_fn(x), fd))
        results.append(CheckResult(name, worst, DEFAULT_TOLERANCE, instances))
    return results


def full_suite(seed=0, instances=100) -> list:
    return loss_suite(seed, instances) + op_suite(seed, instances)
