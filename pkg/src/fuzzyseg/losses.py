"""Segmentation losses: cross-entropy, membership entropy, and their combination.

All functions operate on (num_classes, num_pixels) matrices with one column
per pixel, and reduce by averaging over pixels so values are comparable across
image and batch sizes.  Gradients are taken with respect to the pre-softmax
logits and include the same 1/num_pixels factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidInputError, ShapeError

# Loss kinds.
CCE = "cce"
FCCE = "fcce"
DSV = "dsv"  # per-head objective of the deeply supervised nested model

# Membership sources for the entropy term of the combined loss.
FCM_FIXED = "fcm_fixed"      # clustering memberships; constant w.r.t. the network
PREDICTION = "prediction"    # the softmax output itself; gradient flows
BLEND = "blend"              # convex mix of the two

EPS = 1e-12  # log clamp; 0 * log 0 is taken as 0


@dataclass
class LossConfig:
    """Selects the training objective.

    ``entropy_weight`` scales the membership-entropy term of the combined
    loss; with weight 0 the combined loss reduces bitwise to plain
    cross-entropy.  ``membership_source`` picks whose uncertainty the entropy
    measures; ``blend_beta`` is the clustering share in the ``BLEND`` mix.
    """

    kind: str = CCE
    membership_source: str = PREDICTION
    blend_beta: float = 0.5
    entropy_weight: float = 1.0
    epsilon: float = EPS

    def validate(self) -> None:
        if self.kind not in (CCE, FCCE, DSV):
            raise ConfigurationError(f"unknown loss kind {self.kind!r}")
        if self.membership_source not in (FCM_FIXED, PREDICTION, BLEND):
            raise ConfigurationError(
                f"unknown membership_source {self.membership_source!r}"
            )
        if not 0.0 <= self.blend_beta <= 1.0:
            raise ConfigurationError(f"blend_beta must be in [0,1], got {self.blend_beta}")
        if self.entropy_weight < 0.0:
            raise ConfigurationError(f"entropy_weight must be >= 0, got {self.entropy_weight}")
        if not 0.0 < self.epsilon <= 1e-6:
            raise ConfigurationError(f"epsilon must be in (0, 1e-6], got {self.epsilon}")


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (classes x pixels), got shape {a.shape}")
    return a


def _check_same_shape(y: np.ndarray, p: np.ndarray) -> None:
    if y.shape != p.shape:
        raise ShapeError(f"label field {y.shape} and probability field {p.shape} differ")


def softmax(logits) -> np.ndarray:
    """Column-wise softmax, stabilized by subtracting each column's max."""
    z = _as_matrix(logits, "logits")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits contain non-finite values")
    shifted = z - z.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def cce(labels, probs, eps: float = EPS) -> float:
    """Mean over pixels of the one-hot cross-entropy -sum(y * log p)."""
    y = _as_matrix(labels, "labels")
    p = _as_matrix(probs, "probs")
    _check_same_shape(y, p)
    n = y.shape[1]
    return float(-(y * np.log(np.maximum(p, eps))).sum() / n)


def cce_grad_logits(labels, probs) -> np.ndarray:
    """Gradient of ``cce(softmax(z))`` w.r.t. the logits z: (p - y) / num_pixels."""
    y = _as_matrix(labels, "labels")
    p = _as_matrix(probs, "probs")
    _check_same_shape(y, p)
    return (p - y) / y.shape[1]


def fuzzy_entropy(memberships, eps: float = EPS) -> float:
    """Mean over pixels of the Shannon entropy of the membership columns.

    Zero for crisp 0/1 memberships, log(num_classes) for uniform ones.
    """
    u = _as_matrix(memberships, "memberships")
    if u.min() < -1e-9 or u.max() > 1.0 + 1e-9:
        raise InvalidInputError("membership entries must lie in [0, 1]")
    n = u.shape[1]
    return float(-(u * np.log(np.maximum(u, eps))).sum() / n)


def fuzzy_entropy_grad(memberships, eps: float = EPS) -> np.ndarray:
    """Entry-wise derivative of ``fuzzy_entropy``: (-log(u) - 1) / num_pixels.

    Entries at zero are clamped to ``eps`` inside the log rather than raising.
    """
    u = _as_matrix(memberships, "memberships")
    if u.min() < -1e-9 or u.max() > 1.0 + 1e-9:
        raise InvalidInputError("membership entries must lie in [0, 1]")
    return (-np.log(np.maximum(u, eps)) - 1.0) / u.shape[1]


def effective_memberships(probs, fcm_memberships, cfg: LossConfig) -> np.ndarray:
    """The membership matrix whose entropy the combined loss penalizes."""
    p = _as_matrix(probs, "probs")
    if cfg.membership_source == PREDICTION:
        return p
    if fcm_memberships is None:
        raise InvalidInputError(
            f"membership_source {cfg.membership_source!r} needs clustering memberships"
        )
    u = _as_matrix(fcm_memberships, "fcm_memberships")
    _check_same_shape(u, p)
    if cfg.membership_source == FCM_FIXED:
        return u
    return cfg.blend_beta * u + (1.0 - cfg.blend_beta) * p


def fcce(labels, probs, fcm_memberships, cfg: LossConfig) -> float:
    """Cross-entropy plus weighted membership entropy.

    With ``entropy_weight == 0`` this returns exactly ``cce(labels, probs)``,
    bitwise, so ablations against plain cross-entropy are a strict reduction.
    """
    cfg.validate()
    base = cce(labels, probs, cfg.epsilon)
    if cfg.entropy_weight == 0.0:
        return base
    u_eff = effective_memberships(probs, fcm_memberships, cfg)
    return base + cfg.entropy_weight * fuzzy_entropy(u_eff, cfg.epsilon)


def _chain_through_softmax(dloss_dprobs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Apply the column-wise softmax Jacobian: dz = p * (g - <g, p>)."""
    inner = (dloss_dprobs * probs).sum(axis=0, keepdims=True)
    return probs * (dloss_dprobs - inner)


def fcce_grad_logits(labels, probs, fcm_memberships, cfg: LossConfig) -> np.ndarray:
    """Gradient of the combined loss w.r.t. the logits.

    The entropy term contributes nothing in ``FCM_FIXED`` mode (its argument
    does not depend on the network), flows fully through the softmax in
    ``PREDICTION`` mode, and is scaled by ``1 - blend_beta`` in ``BLEND`` mode.
    """
    cfg.validate()
    grad = cce_grad_logits(labels, probs)
    if cfg.entropy_weight == 0.0 or cfg.membership_source == FCM_FIXED:
        if cfg.membership_source == FCM_FIXED and fcm_memberships is None:
            raise InvalidInputError("membership_source 'fcm_fixed' needs clustering memberships")
        return grad
    p = _as_matrix(probs, "probs")
    u_eff = effective_memberships(p, fcm_memberships, cfg)
    share = 1.0 if cfg.membership_source == PREDICTION else 1.0 - cfg.blend_beta
    dl_dp = cfg.entropy_weight * share * fuzzy_entropy_grad(u_eff, cfg.epsilon)
    return grad + _chain_through_softmax(dl_dp, p)


def deep_supervision_loss(labels, probs, eps: float = EPS) -> float:
    """Per-head objective of the deeply supervised nested model.

    Mean over pixels of ``-(y log p + 2 y p / (y^2 + p^2))`` summed over
    classes: a cross-entropy term plus a negated overlap term that is
    maximized, so the value can be negative (a perfect single-class pixel
    scores -1).
    """
    y = _as_matrix(labels, "labels").astype(np.float64)
    p = _as_matrix(probs, "probs")
    _check_same_shape(y, p)
    n = y.shape[1]
    log_term = y * np.log(np.maximum(p, eps))
    num = 2.0 * y * p
    den = y * y + p * p
    overlap = np.where(num == 0.0, 0.0, num / np.maximum(den, eps))
    return float(-(log_term + overlap).sum() / n)


def deep_supervision_grad_logits(labels, probs, eps: float = EPS) -> np.ndarray:
    """Gradient of ``deep_supervision_loss(softmax(z))`` w.r.t. the logits."""
    y = _as_matrix(labels, "labels").astype(np.float64)
    p = _as_matrix(probs, "probs")
    _check_same_shape(y, p)
    n = y.shape[1]
    p_safe = np.maximum(p, eps)
    den = np.maximum(y * y + p * p, eps)
    # d/dp of y log p is y/p; of 2yp/(y^2+p^2) is 2y(y^2 - p^2)/(y^2+p^2)^2.
    dl_dp = -(y / p_safe + 2.0 * y * (y * y - p * p) / (den * den)) / n
    return _chain_through_softmax(dl_dp, p)
