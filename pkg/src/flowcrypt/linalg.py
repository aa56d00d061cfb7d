"""Dense orthogonal-matrix primitives: Haar sampling, Frobenius geometry,
and the volume-calibrated balls used by the recovery definitions.

Matrices are plain ``numpy.ndarray`` in row-major layout. The orthogonal
group O(m) is sampled exactly Haar-uniformly via the Gaussian + QR + sign
construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidArgumentError, ShapeMismatchError

RngLike = Union[int, np.random.Generator]

# Orthogonality acceptance threshold for freshly sampled keys.
ORTHO_TOL = 1e-10

# Relative slack on the <=-comparison in is_successful_recovery. Pure
# float-rounding guard: at theta=1 the ball must contain candidates at the
# numerically computed maximum distance 2*sqrt(m).
_RECOVERY_REL_SLACK = 1e-12

# Relative shrink applied to empirical quantile radii. Implements open-ball
# semantics at atoms of the distance distribution (at m=2 all cross pairs
# rotation/reflection sit at distance exactly 2); invisible at continuity
# points.
_QUANTILE_SHRINK = 1e-9


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a 2-D float array with finite entries."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return m


def _coerce_rng(rng: RngLike) -> tuple[np.random.Generator, Optional[int]]:
    """Return (generator, seed). When given an int the seed is recorded."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng)
    return np.random.default_rng(seed), seed


@dataclass(frozen=True)
class OrthogonalKey:
    """A secret m x m orthogonal matrix plus the seed that generated it.

    ``seed`` is None for keys loaded from files (the key format does not
    store it).
    """

    dim: int
    matrix: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        m = as_matrix(self.matrix, "key matrix")
        if m.shape != (self.dim, self.dim):
            raise ShapeMismatchError(
                f"key matrix shape {m.shape} != ({self.dim}, {self.dim})"
            )
        err = orthogonality_error(m)
        if err >= ORTHO_TOL:
            raise InvalidArgumentError(
                f"matrix is not orthogonal: ||A A^T - I||_F = {err:.3e}"
            )


@dataclass(frozen=True)
class BallSpec:
    """Frobenius ball radius calibrated so a theta fraction of Haar measure
    falls inside it."""

    theta: float
    dim: int
    radius: float
    ci_halfwidth: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise InvalidArgumentError(f"theta must be in (0, 1], got {self.theta}")
        if self.dim < 1:
            raise InvalidArgumentError("dim must be >= 1")
        if self.radius < 0:
            raise InvalidArgumentError("radius must be >= 0")
        if self.radius > 2.0 * np.sqrt(self.dim) + 1e-9:
            raise InvalidArgumentError(
                f"radius {self.radius} exceeds the 2*sqrt(dim) diameter bound"
            )


def orthogonality_error(a: np.ndarray) -> float:
    """||A A^T - I||_F."""
    a = np.asarray(a, dtype=float)
    return float(np.linalg.norm(a @ a.T - np.eye(a.shape[0])))


def sample_haar_orthogonal(dim: int, rng: RngLike) -> OrthogonalKey:
    """Draw a Haar-uniform element of O(dim).

    Fills dim x dim with i.i.d. standard normals, QR-factorizes, and flips
    the sign of column j of Q by sign(R[j][j]). Given the same seed the
    result is bit-identical.
    """
    if dim < 1:
        raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
    gen, seed = _coerce_rng(rng)
    if seed is None:
        # Record a concrete regenerating seed even when fed a shared stream.
        seed = int(gen.integers(0, 2**63))
        gen = np.random.default_rng(seed)
    g = gen.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    signs = np.where(d >= 0.0, 1.0, -1.0)
    q = q * signs[np.newaxis, :]
    return OrthogonalKey(dim=dim, matrix=q, seed=seed)


def frobenius_distance(m: np.ndarray, a: np.ndarray) -> float:
    """sqrt(sum((M_ij - A_ij)^2)) with a shape check."""
    m = as_matrix(m, "M")
    a = as_matrix(a, "A")
    if m.shape != a.shape:
        raise ShapeMismatchError(f"shape mismatch: {m.shape} vs {a.shape}")
    return float(np.linalg.norm(m - a))


def haar_distance_pool(dim: int, mc_samples: int, rng: RngLike) -> np.ndarray:
    """Sorted ||M - I||_F over mc_samples Haar draws M.

    By left-invariance this is also the law of ||M - A||_F for any fixed
    orthogonal A, so one pool calibrates balls around every center.
    """
    gen, _ = _coerce_rng(rng)
    eye = np.eye(dim)
    dists = np.empty(mc_samples)
    for i in range(mc_samples):
        g = gen.standard_normal((dim, dim))
        q, r = np.linalg.qr(g)
        d = np.diagonal(r)
        q = q * np.where(d >= 0.0, 1.0, -1.0)[np.newaxis, :]
        dists[i] = np.linalg.norm(q - eye)
    dists.sort()
    return dists


def ball_radius_for_volume(
    theta: float,
    dim: int,
    mc_samples: int = 100_000,
    rng: RngLike = 0,
    n_bootstrap: int = 50,
) -> BallSpec:
    """Estimate the smallest radius whose Haar volume is >= theta.

    theta=1 returns the exact diameter 2*sqrt(dim). Otherwise the radius is
    the empirical theta-quantile of ||M - I||_F (ties resolved upward, per
    the min{delta | v >= theta} direction), with a bootstrap CI.
    """
    if not (0.0 < theta <= 1.0):
        raise InvalidArgumentError(f"theta must be in (0, 1], got {theta}")
    if dim < 1:
        raise InvalidArgumentError("dim must be >= 1")
    if mc_samples < 1000:
        raise InvalidArgumentError("mc_samples must be >= 1000")
    if theta == 1.0:
        return BallSpec(theta=1.0, dim=dim, radius=2.0 * np.sqrt(dim))
    gen, _ = _coerce_rng(rng)
    dists = haar_distance_pool(dim, mc_samples, gen)
    k = int(np.ceil(theta * mc_samples)) - 1
    radius = float(dists[k]) * (1.0 - _QUANTILE_SHRINK)
    boot = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        resample = gen.choice(dists, size=mc_samples, replace=True)
        resample.sort()
        boot[b] = resample[k]
    ci = 1.96 * float(np.std(boot))
    return BallSpec(theta=theta, dim=dim, radius=radius, ci_halfwidth=ci)


def is_successful_recovery(
    candidate: np.ndarray, key: OrthogonalKey, ball: BallSpec
) -> bool:
    """True iff the candidate lies within the calibrated ball around the key."""
    cand = as_matrix(candidate, "candidate")
    if cand.shape != (ball.dim, ball.dim) or key.dim != ball.dim:
        raise ShapeMismatchError(
            f"candidate {cand.shape} / key dim {key.dim} do not match ball dim {ball.dim}"
        )
    dist = frobenius_distance(cand, key.matrix)
    return dist <= ball.radius * (1.0 + _RECOVERY_REL_SLACK)
