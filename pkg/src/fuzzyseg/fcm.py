"""Fuzzy c-means clustering over scalar pixel intensities.

Soft-assigns every pixel a membership degree in [0, 1] per cluster, with
memberships summing to one across clusters.  The converged membership matrix is
what the entropy-regularized losses consume as their per-pixel uncertainty
prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateClusterError, InvalidInputError, ShapeError


@dataclass
class FcmConfig:
    """Settings for one clustering run.

    Parameters
    ----------
    num_clusters : int
        Number of clusters (>= 2 and strictly less than the pixel count).
    fuzzifier : float
        Softness exponent, > 1.  Larger values drive memberships toward
        uniform; 2.0 is the conventional choice.
    max_iterations : int
        Hard cap on alternating update rounds.
    tolerance : float
        Convergence threshold on the max absolute membership change.
    seed : int
        Only consulted to break exact ties in the quantile initialization;
        the algorithm is otherwise deterministic.
    """

    num_clusters: int = 4
    fuzzifier: float = 2.0
    max_iterations: int = 100
    tolerance: float = 1e-5
    seed: int = 0

    def validate(self) -> None:
        if self.num_clusters < 2:
            raise InvalidInputError(f"num_clusters must be >= 2, got {self.num_clusters}")
        if not self.fuzzifier > 1.0:
            raise InvalidInputError(f"fuzzifier must be > 1, got {self.fuzzifier}")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise InvalidInputError("tolerance must be > 0")


@dataclass
class FcmResult:
    """Converged state of one run.

    ``memberships`` has one row per cluster and one column per pixel; rows are
    ordered by ascending centroid intensity so cluster index tracks tissue
    brightness.  ``objective_trace`` holds the weighted within-cluster squared
    error after the initial assignment and after every paired update; it is
    non-increasing.
    """

    memberships: np.ndarray
    centroids: np.ndarray
    objective: float
    iterations_used: int
    converged: bool
    objective_trace: list = field(default_factory=list)


def _check_pixels(pixels) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 1 or pixels.size == 0:
        raise InvalidInputError(f"pixels must be a non-empty 1-D vector, got shape {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise InvalidInputError("pixels contain non-finite values")
    return pixels


def update_memberships(pixels, centroids, fuzzifier: float) -> np.ndarray:
    """Optimal memberships for fixed centroids.

    For each pixel the membership to cluster ``i`` is proportional to
    ``d_i^(-2/(fuzzifier-1))`` where ``d_i`` is the distance to centroid ``i``,
    normalized so each column sums to one.  A pixel coinciding with ``k``
    centroids gets membership ``1/k`` on each coincident cluster and zero
    elsewhere.

    Returns
    -------
    np.ndarray
        Matrix of shape (num_clusters, num_pixels).
    """
    pixels = _check_pixels(pixels)
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 1 or centroids.size == 0:
        raise InvalidInputError("centroids must be a non-empty 1-D vector")
    if not np.all(np.isfinite(centroids)):
        raise InvalidInputError("centroids contain non-finite values")
    if not fuzzifier > 1.0:
        raise InvalidInputError(f"fuzzifier must be > 1, got {fuzzifier}")

    d2 = (pixels[None, :] - centroids[:, None]) ** 2  # (c, N)
    zero = d2 == 0.0
    u = np.zeros_like(d2)

    hit = zero.any(axis=0)
    if hit.any():
        counts = zero[:, hit].sum(axis=0)
        u[:, hit] = zero[:, hit] / counts

    rest = ~hit
    if rest.any():
        d2r = d2[:, rest]
        # Scale by the per-column minimum so the ratios stay <= 1; avoids
        # overflow when a pixel sits arbitrarily close to a centroid.
        ratios = d2r.min(axis=0, keepdims=True) / d2r
        weights = ratios ** (1.0 / (fuzzifier - 1.0))
        u[:, rest] = weights / weights.sum(axis=0, keepdims=True)
    return u


def update_centroids(pixels, memberships, fuzzifier: float) -> np.ndarray:
    """Optimal centroids for fixed memberships: the ``u^m``-weighted pixel means.

    Raises
    ------
    DegenerateClusterError
        If some cluster carries zero total membership mass, which would make
        its centroid 0/0.
    """
    pixels = _check_pixels(pixels)
    memberships = np.asarray(memberships, dtype=np.float64)
    if memberships.ndim != 2 or memberships.shape[1] != pixels.size:
        raise ShapeError(
            f"memberships shape {memberships.shape} inconsistent with {pixels.size} pixels"
        )
    weights = memberships ** fuzzifier
    mass = weights.sum(axis=1)
    dead = mass <= 0.0
    if dead.any():
        raise DegenerateClusterError(
            f"cluster(s) {np.flatnonzero(dead).tolist()} have zero membership mass"
        )
    return (weights @ pixels) / mass


def objective(pixels, memberships, centroids, fuzzifier: float) -> float:
    """Weighted within-cluster squared error: sum of ``u^m * (x - v)^2``."""
    pixels = _check_pixels(pixels)
    memberships = np.asarray(memberships, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if memberships.shape != (centroids.size, pixels.size):
        raise ShapeError(
            f"memberships shape {memberships.shape} inconsistent with "
            f"{centroids.size} clusters x {pixels.size} pixels"
        )
    d2 = (pixels[None, :] - centroids[:, None]) ** 2
    return float(((memberships ** fuzzifier) * d2).sum())


def _init_centroids(pixels: np.ndarray, num_clusters: int, seed: int) -> np.ndarray:
    """Evenly spaced intensity quantiles; a seeded jitter separates exact ties."""
    probs = (2.0 * np.arange(num_clusters) + 1.0) / (2.0 * num_clusters)
    centroids = np.quantile(pixels, probs)
    if np.unique(centroids).size < num_clusters:
        rng = np.random.default_rng(seed)
        scale = max(np.ptp(pixels), 1.0) * 1e-9
        centroids = np.sort(centroids + (rng.random(num_clusters) - 0.5) * scale)
    return centroids


def run(pixels, config: FcmConfig) -> FcmResult:
    """Alternate membership and centroid updates until convergence.

    Stops when the largest membership change falls below ``config.tolerance``
    or after ``config.max_iterations`` rounds.  Clusters in the result are
    sorted by ascending centroid.  Deterministic: identical inputs and config
    give a bitwise-identical result.
    """
    config.validate()
    pixels = _check_pixels(pixels)
    if pixels.size <= config.num_clusters:
        raise InvalidInputError(
            f"need more pixels ({pixels.size}) than clusters ({config.num_clusters})"
        )

    m = config.fuzzifier
    centroids = _init_centroids(pixels, config.num_clusters, config.seed)
    memberships = update_memberships(pixels, centroids, m)
    trace = [objective(pixels, memberships, centroids, m)]

    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        centroids = update_centroids(pixels, memberships, m)
        new_memberships = update_memberships(pixels, centroids, m)
        change = np.abs(new_memberships - memberships).max()
        memberships = new_memberships
        trace.append(objective(pixels, memberships, centroids, m))
        if change < config.tolerance:
            converged = True
            break

    order = np.argsort(centroids, kind="stable")
    return FcmResult(
        memberships=memberships[order],
        centroids=centroids[order],
        objective=trace[-1],
        iterations_used=iterations,
        converged=converged,
        objective_trace=trace,
    )
