"""Executable security analysis: total-variation estimation, the
n-sample sandwich inequality, rotation-invariance testing, the maximum-
likelihood rotation-recovery attack at m=2, and the success-probability
bound audit."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError, ShapeMismatchError
from .flow import gaussian_log_density
from .linalg import (
    BallSpec,
    OrthogonalKey,
    ball_radius_for_volume,
    is_successful_recovery,
    sample_haar_orthogonal,
)

# Log-likelihood ties within this relative band are broken uniformly at
# random: with an isotropic density every candidate ties exactly, and the
# attack output must then be a genuine random guess.
_TIE_REL_TOL = 1e-12


@dataclass
class TVEstimate:
    value: float
    method: str
    ci_halfwidth: float

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise InvalidArgumentError(f"TV value {self.value} outside [0, 1]")
        if self.ci_halfwidth < 0:
            raise InvalidArgumentError("ci_halfwidth must be >= 0")


@dataclass
class FeatureSamples:
    label: str  # one of "H0", "Gg", "H1"
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2:
            raise ShapeMismatchError("feature samples must be (n, m)")
        if self.label not in ("H0", "Gg", "H1"):
            raise InvalidArgumentError(f"unknown feature label {self.label!r}")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _vectors(x) -> np.ndarray:
    if isinstance(x, FeatureSamples):
        return x.vectors
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ShapeMismatchError("samples must be (n, m)")
    return arr


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def tv_analytic_gaussian(mu1: float, mu2: float, sigma: float) -> float:
    """TV distance between N(mu1, sigma^2) and N(mu2, sigma^2):
    2 Phi(|mu1 - mu2| / (2 sigma)) - 1."""
    if sigma <= 0:
        raise InvalidArgumentError(f"sigma must be > 0, got {sigma}")
    return 2.0 * _norm_cdf(abs(mu1 - mu2) / (2.0 * sigma)) - 1.0


def _histogram_bins(n: int, dim: int) -> int:
    """Per-dimension bin count; keeps the plug-in noise bias sqrt(B/(pi n))
    small while leaving enough resolution."""
    if dim == 1:
        return int(np.clip(np.sqrt(n) / 10.0, 8, 64))
    if dim == 2:
        return int(np.clip(n**0.25 / 2.0, 4, 16))
    return int(np.clip(n ** (1.0 / 6.0) / 2.0, 3, 4))


def _histogram_counts(p: np.ndarray, q: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell counts on a shared per-dimension quantile grid of the pooled data."""
    dim = p.shape[1]
    pooled = np.concatenate([p, q], axis=0)
    edges = []
    for d in range(dim):
        qs = np.quantile(pooled[:, d], np.linspace(0, 1, bins + 1))
        qs[0], qs[-1] = -np.inf, np.inf
        qs = np.unique(qs)
        if qs.size < 2:
            qs = np.array([-np.inf, np.inf])
        edges.append(qs)
    cp, _ = np.histogramdd(p, bins=edges)
    cq, _ = np.histogramdd(q, bins=edges)
    return cp.ravel(), cq.ravel()


def tv_empirical(
    p,
    q,
    rng: Union[int, np.random.Generator] = 0,
    n_bootstrap: int = 200,
    method: Optional[str] = None,
) -> TVEstimate:
    """Estimate TV from two sample sets.

    dim <= 3: histogram plug-in, 0.5 * sum |p_hat - q_hat| on a shared
    adaptive grid. dim > 3: classifier lower bound 2*acc - 1 from a held-out
    logistic separator. A bootstrap CI is attached either way.
    """
    pv, qv = _vectors(p), _vectors(q)
    if pv.shape[1] != qv.shape[1]:
        raise ShapeMismatchError(f"dim mismatch: {pv.shape[1]} vs {qv.shape[1]}")
    if pv.shape[0] < 1000 or qv.shape[0] < 1000:
        raise InvalidArgumentError("tv_empirical needs >= 1000 samples per side")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    dim = pv.shape[1]
    if method is None:
        method = "histogram" if dim <= 3 else "classifier-lower-bound"

    if method == "histogram":
        bins = _histogram_bins(min(pv.shape[0], qv.shape[0]), dim)
        cp, cq = _histogram_counts(pv, qv, bins)
        np_, nq = cp.sum(), cq.sum()
        value = 0.5 * float(np.abs(cp / np_ - cq / nq).sum())
        boots = np.empty(n_bootstrap)
        prob_p, prob_q = cp / np_, cq / nq
        for b in range(n_bootstrap):
            rp = gen.multinomial(int(np_), prob_p)
            rq = gen.multinomial(int(nq), prob_q)
            boots[b] = 0.5 * np.abs(rp / np_ - rq / nq).sum()
        ci = 1.96 * float(np.std(boots))
        return TVEstimate(value=min(value, 1.0), method="histogram", ci_halfwidth=ci)

    if method == "classifier-lower-bound":
        from sklearn.linear_model import LogisticRegression

        x = np.concatenate([pv, qv], axis=0)
        y = np.concatenate([np.zeros(pv.shape[0]), np.ones(qv.shape[0])])
        order = gen.permutation(x.shape[0])
        x, y = x[order], y[order]
        half = x.shape[0] // 2
        clf = LogisticRegression(max_iter=1000)
        clf.fit(x[:half], y[:half])
        correct = (clf.predict(x[half:]) == y[half:]).astype(float)
        acc = float(correct.mean())
        value = max(0.0, 2.0 * acc - 1.0)
        boots = np.empty(n_bootstrap)
        for b in range(n_bootstrap):
            idx = gen.integers(0, correct.size, correct.size)
            boots[b] = max(0.0, 2.0 * correct[idx].mean() - 1.0)
        ci = 1.96 * float(np.std(boots))
        return TVEstimate(value=min(value, 1.0), method="classifier-lower-bound", ci_halfwidth=ci)

    raise InvalidArgumentError(f"unknown TV method {method!r}")


@dataclass
class SandwichReport:
    mu_delta: float
    sigma: float
    n: int
    delta_1: float
    delta_n: float
    middle: float
    upper: float
    holds: bool


def sandwich_check(mu_delta: float, sigma: float, n: int, slack: float = 1e-12) -> SandwichReport:
    """Verify delta(P^n, Q^n) <= 1 - (1 - delta)^n <= n*delta analytically
    for equal-variance Gaussian shifts (the n-fold product reduces to a 1-D
    shift of sqrt(n)*|dmu|)."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    d1 = tv_analytic_gaussian(0.0, mu_delta, sigma)
    dn = tv_analytic_gaussian(0.0, math.sqrt(n) * abs(mu_delta), sigma)
    middle = 1.0 - (1.0 - d1) ** n
    upper = n * d1
    holds = (dn <= middle + slack) and (middle <= upper + slack)
    return SandwichReport(
        mu_delta=mu_delta, sigma=sigma, n=n,
        delta_1=d1, delta_n=dn, middle=middle, upper=upper, holds=holds,
    )


@dataclass
class RotationInvarianceReport:
    mean_stat: float
    mean_threshold: float
    mean_pass: bool
    cov_stat: float
    cov_threshold: float
    cov_pass: bool
    energy_stat: float
    energy_threshold: float
    energy_pass: bool

    @property
    def passed(self) -> bool:
        return self.mean_pass and self.cov_pass and self.energy_pass


def _energy_statistic(dmat: np.ndarray, mask0: np.ndarray) -> float:
    """2 E||X-Y|| - E||X-X'|| - E||Y-Y'|| from the pooled distance matrix and
    a first-group membership mask. One matvec per call, so permutation
    calibration stays cheap."""
    n0 = int(mask0.sum())
    n1 = mask0.size - n0
    row = dmat @ mask0
    s00 = float(mask0 @ row)
    s01 = float(row.sum()) - s00
    s11 = float(dmat.sum()) - 2.0 * s01 - s00
    return 2.0 * s01 / (n0 * n1) - s00 / (n0 * n0) - s11 / (n1 * n1)


def rotation_invariance_check(
    samples,
    key: OrthogonalKey,
    alpha: float = 0.01,
    rng: Union[int, np.random.Generator] = 0,
    energy_cap: int = 1024,
    permutations: int = 200,
    null_sims: int = 300,
) -> RotationInvarianceReport:
    """Rotate the samples by the key and test Gaussian invariance three ways:
    per-dim mean z-test, ||cov - I||_F against a Monte Carlo null, and a
    permutation-calibrated two-sample energy distance original vs rotated."""
    x = _vectors(samples)
    n, m = x.shape
    if n < 1000:
        raise InvalidArgumentError("rotation_invariance_check needs >= 1000 samples")
    if m != key.dim:
        raise ShapeMismatchError(f"sample dim {m} != key dim {key.dim}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    rotated = x @ key.matrix.T

    # (a) max per-dim standardized mean, Bonferroni over dims.
    sd = rotated.std(axis=0, ddof=1)
    mean_stat = float(np.max(np.abs(rotated.mean(axis=0)) * np.sqrt(n) / sd))
    mean_threshold = float(stats.norm.ppf(1.0 - alpha / (2.0 * m)))

    # (b) ||empirical covariance - I||_F with MC-calibrated threshold.
    cov_stat = float(np.linalg.norm(np.cov(rotated, rowvar=False, bias=True) - np.eye(m)))
    null = np.empty(null_sims)
    for i in range(null_sims):
        sim = gen.standard_normal((n, m))
        null[i] = np.linalg.norm(np.cov(sim, rowvar=False, bias=True) - np.eye(m))
    cov_threshold = float(np.quantile(null, 1.0 - alpha))

    # (c) two-sample energy distance, permutation threshold.
    if n > energy_cap:
        idx = gen.choice(n, energy_cap, replace=False)
        xs, rs = x[idx], rotated[idx]
    else:
        xs, rs = x, rotated
    pooled = np.concatenate([xs, rs], axis=0)
    diff = pooled[:, np.newaxis, :] - pooled[np.newaxis, :, :]
    dmat = np.sqrt(np.sum(diff**2, axis=2))
    total = pooled.shape[0]
    n0 = xs.shape[0]
    # Direct block means for the observed statistic: bitwise-identical blocks
    # (identity key) give exactly 0.
    energy_stat = float(
        2.0 * dmat[:n0, n0:].mean() - dmat[:n0, :n0].mean() - dmat[n0:, n0:].mean()
    )
    perm_stats = np.empty(permutations)
    for i in range(permutations):
        mask = np.zeros(total)
        mask[gen.permutation(total)[:n0]] = 1.0
        perm_stats[i] = _energy_statistic(dmat, mask)
    energy_threshold = float(np.quantile(perm_stats, 1.0 - alpha))

    return RotationInvarianceReport(
        mean_stat=mean_stat, mean_threshold=mean_threshold,
        mean_pass=mean_stat <= mean_threshold,
        cov_stat=cov_stat, cov_threshold=cov_threshold,
        cov_pass=cov_stat <= cov_threshold,
        energy_stat=energy_stat, energy_threshold=energy_threshold,
        energy_pass=energy_stat <= energy_threshold,
    )


def rotation_candidates(grid_size: int) -> np.ndarray:
    """(2*grid_size, 2, 2) array: rotations R(phi) then reflections
    R(phi) @ diag(1, -1) over a uniform angle grid."""
    phi = 2.0 * np.pi * np.arange(grid_size) / grid_size
    c, s = np.cos(phi), np.sin(phi)
    rot = np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)
    refl = rot.copy()
    refl[:, :, 1] = -refl[:, :, 1]
    return np.concatenate([rot, refl], axis=0)


def standard_normal_logpdf(points: np.ndarray) -> np.ndarray:
    return gaussian_log_density(np.atleast_2d(points))


def make_gaussian_logpdf(mean, cov) -> Callable[[np.ndarray], np.ndarray]:
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    inv = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    m = mean.size
    const = -0.5 * (m * np.log(2 * np.pi) + logdet)

    def logpdf(points: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(points) - mean
        return const - 0.5 * np.einsum("ni,ij,nj->n", d, inv, d)

    return logpdf


def recover_rotation_mle(
    encrypted,
    density: Callable[[np.ndarray], np.ndarray],
    grid_size: int = 360,
    rng: Union[int, np.random.Generator] = 0,
) -> np.ndarray:
    """Grid-search MLE for the 2x2 orthogonal key: maximize
    sum_i log g(A_cand^T x_hat_i) over rotations and reflections.

    Exact likelihood ties are broken uniformly at random, so with an
    isotropic density the output is a genuine random guess.
    """
    x = _vectors(encrypted)
    if x.shape[1] != 2:
        raise ShapeMismatchError("the MLE attack is defined for dim 2")
    if grid_size < 8:
        raise InvalidArgumentError("grid_size must be >= 8")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    cands = rotation_candidates(grid_size)
    # (A^T x)^T = x^T A: evaluate all candidates in one einsum.
    transformed = np.einsum("ni,kij->knj", x, cands)
    loglik = np.array([np.sum(density(transformed[k])) for k in range(cands.shape[0])])
    best = np.max(loglik)
    tol = _TIE_REL_TOL * max(1.0, abs(best))
    tied = np.flatnonzero(loglik >= best - tol)
    pick = int(tied[gen.integers(0, tied.size)]) if tied.size > 1 else int(tied[0])
    return cands[pick]


@dataclass
class AuditReport:
    theta: float
    n: int
    trials: int
    tv_hat: TVEstimate
    p_hat: float
    bound: float
    holds: bool
    seed: int
    ball: BallSpec
    sigma_hat: float
    adversary_density: str = "exact"
    successes: int = 0
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "theta": self.theta,
                "n": self.n,
                "trials": self.trials,
                "tv": {
                    "value": self.tv_hat.value,
                    "method": self.tv_hat.method,
                    "ci": self.tv_hat.ci_halfwidth,
                },
                "p_hat": self.p_hat,
                "bound": self.bound,
                "holds": self.holds,
                "seed": self.seed,
                "ball_radius": self.ball.radius,
                "adversary_density": self.adversary_density,
            }
        )


def _run_trial(
    seed: int,
    features: Optional[np.ndarray],
    density,
    n: int,
    ball: BallSpec,
    grid_size: int,
) -> bool:
    gen = np.random.default_rng(seed)
    key = sample_haar_orthogonal(2, int(gen.integers(0, 2**63)))
    if features is None:
        draws = gen.standard_normal((n, 2))
    else:
        draws = features[gen.integers(0, features.shape[0], n)]
    encrypted = draws @ key.matrix.T
    candidate = recover_rotation_mle(encrypted, density, grid_size, gen)
    return is_successful_recovery(candidate, key, ball)


def theorem_bound_audit(
    feature_source,
    theta: float,
    n: int,
    trials: int,
    rng: Union[int, np.random.Generator] = 0,
    grid_size: int = 360,
    mc_samples: int = 100_000,
    tv_samples: int = 20_000,
    threads: int = 1,
) -> AuditReport:
    """Audit the recovery bound p <= n * TV(H0, H1) + theta at m=2.

    feature_source is "exact-gaussian", or an (n, 2) array of feature
    vectors (e.g. flow outputs); in the latter case the adversary is handed
    a Gaussian moment fit of the features as its G_g density.
    """
    if not (0.0 < theta <= 1.0):
        raise InvalidArgumentError(f"theta must be in (0, 1], got {theta}")
    if trials < 200:
        raise InvalidArgumentError("trials must be >= 200")
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if isinstance(rng, np.random.Generator):
        seed = int(rng.integers(0, 2**63))
    else:
        seed = int(rng)
    root = np.random.SeedSequence(seed)
    ball_seq, tv_seq, trial_seq = root.spawn(3)

    ball = ball_radius_for_volume(theta, 2, mc_samples, np.random.default_rng(ball_seq))

    tv_gen = np.random.default_rng(tv_seq)
    if isinstance(feature_source, str):
        if feature_source != "exact-gaussian":
            raise InvalidArgumentError(f"unknown feature source {feature_source!r}")
        features = None
        density = standard_normal_logpdf
        adversary = "exact"
        pool = tv_gen.standard_normal((tv_samples, 2))
    else:
        features = _vectors(feature_source)
        if features.shape[1] != 2:
            raise ShapeMismatchError("trained-flow audit features must be 2-D")
        density = make_gaussian_logpdf(features.mean(axis=0), np.cov(features, rowvar=False))
        adversary = "gaussian-moment-fit"
        pool = features[tv_gen.integers(0, features.shape[0], tv_samples)]
    tv_key = sample_haar_orthogonal(2, int(tv_gen.integers(0, 2**63)))
    h0 = FeatureSamples("H0", tv_gen.standard_normal((tv_samples, 2)))
    h1 = FeatureSamples("H1", pool @ tv_key.matrix.T)
    tv_hat = tv_empirical(h0, h1, rng=tv_gen)

    trial_seeds = [
        int(s.generate_state(1, dtype=np.uint64)[0]) % 2**63
        for s in trial_seq.spawn(trials)
    ]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool_exec:
            results = list(
                pool_exec.map(
                    lambda s: _run_trial(s, features, density, n, ball, grid_size),
                    trial_seeds,
                )
            )
    else:
        results = [_run_trial(s, features, density, n, ball, grid_size) for s in trial_seeds]
    successes = int(np.sum(results))
    p_hat = successes / trials
    sigma_hat = math.sqrt(max(p_hat * (1.0 - p_hat), 1e-12) / trials)
    bound = min(1.0, n * tv_hat.value + theta)
    holds = p_hat <= bound + 3.0 * sigma_hat
    return AuditReport(
        theta=theta, n=n, trials=trials, tv_hat=tv_hat, p_hat=p_hat,
        bound=bound, holds=holds, seed=seed, ball=ball, sigma_hat=sigma_hat,
        adversary_density=adversary, successes=successes,
    )
