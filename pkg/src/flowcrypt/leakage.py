"""Gradient leakage at desk scale: a twice-differentiable toy classifier,
a linear-regression victim, federated averaging, and the dummy-gradient
reconstruction attack (match loss minimized with numerically propagated
curvature)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.optimize

from .errors import InvalidArgumentError, ShapeMismatchError

DIVERGENCE_LIMIT = 1e12


class GradientVector:
    """Per-parameter gradient arrays, flattenable into one vector."""

    def __init__(self, arrays: list[np.ndarray]):
        self.arrays = [np.asarray(a, dtype=float) for a in arrays]

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))

    def __len__(self) -> int:
        return len(self.arrays)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


class ToyClassifier:
    """Dense layers with sigmoid activations (twice differentiable) and a
    softmax cross-entropy head."""

    def __init__(self, dims: Sequence[int], rng: Union[int, np.random.Generator] = 0):
        if len(dims) < 2:
            raise InvalidArgumentError("need at least input and output dims")
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.dims = list(dims)
        self.weights = []
        self.biases = []
        for a, b in zip(dims[:-1], dims[1:]):
            self.weights.append(gen.standard_normal((b, a)) / np.sqrt(a))
            self.biases.append(np.zeros(b))

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_params(self, arrays: list[np.ndarray]) -> None:
        for target, src in zip(self.param_arrays(), arrays):
            target[...] = src

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (logits, activations) with activations[0] = x."""
        acts = [np.asarray(x, dtype=float)]
        a = acts[0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = w @ a + b
            a = pre if i == len(self.weights) - 1 else _sigmoid(pre)
            acts.append(a)
        return acts[-1], acts

    def loss(self, x: np.ndarray, target: np.ndarray) -> float:
        """Cross-entropy against a target distribution (one-hot or soft)."""
        logits, _ = self.forward(x)
        logp = logits - np.max(logits)
        logp = logp - np.log(np.sum(np.exp(logp)))
        return float(-np.dot(target, logp))

    def loss_and_gradients(self, x: np.ndarray, target: np.ndarray) -> tuple[float, GradientVector]:
        logits, acts = self.forward(x)
        logp = logits - np.max(logits)
        logp = logp - np.log(np.sum(np.exp(logp)))
        loss = float(-np.dot(target, logp))
        delta = np.exp(logp) * target.sum() - target
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = acts[i]
            grads.append(delta.copy())           # bias gradient
            grads.append(np.outer(delta, a_prev))  # weight gradient
            if i > 0:
                back = self.weights[i].T @ delta
                delta = back * acts[i] * (1.0 - acts[i])
        grads.reverse()
        return loss, GradientVector(grads)


class LinearRegressionVictim:
    """Scalar affine regression, loss = 0.5 * (w.x + b - y)^2.

    The bias gradient equals the residual, which pins the scale and makes
    gradient matching identify x uniquely (closed form x = grad_w / grad_b).
    """

    def __init__(self, input_dim: int, rng: Union[int, np.random.Generator] = 0):
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.dims = [input_dim, 1]
        self.w = gen.standard_normal(input_dim) / np.sqrt(input_dim)
        self.b = float(gen.standard_normal())

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def n_classes(self) -> int:
        return 1

    def loss(self, x: np.ndarray, target: np.ndarray) -> float:
        r = float(self.w @ x + self.b - target[0])
        return 0.5 * r * r

    def loss_and_gradients(self, x: np.ndarray, target: np.ndarray) -> tuple[float, GradientVector]:
        r = float(self.w @ x + self.b - target[0])
        return 0.5 * r * r, GradientVector([r * np.asarray(x, dtype=float), np.array([r])])


Victim = Union[ToyClassifier, LinearRegressionVictim]


def _target_from_label(model: Victim, y) -> np.ndarray:
    if isinstance(model, LinearRegressionVictim):
        return np.atleast_1d(np.asarray(y, dtype=float))
    if np.isscalar(y) or (isinstance(y, np.ndarray) and y.ndim == 0):
        onehot = np.zeros(model.n_classes)
        onehot[int(y)] = 1.0
        return onehot
    arr = np.asarray(y, dtype=float)
    if arr.shape != (model.n_classes,):
        raise ShapeMismatchError(f"label shape {arr.shape} != ({model.n_classes},)")
    return arr


def compute_gradients(model: Victim, x, y) -> GradientVector:
    """Exact reverse-mode gradients of the victim loss at (x, y)."""
    xv = np.asarray(x, dtype=float)
    if xv.shape != (model.input_dim,):
        raise ShapeMismatchError(f"input shape {xv.shape} != ({model.input_dim},)")
    if not np.all(np.isfinite(xv)):
        raise InvalidArgumentError("non-finite input")
    _, grads = model.loss_and_gradients(xv, _target_from_label(model, y))
    return grads


def federated_step(params: list[np.ndarray], grads: list[GradientVector], eta: float) -> list[np.ndarray]:
    """W <- W - eta * mean over agents of their gradients."""
    if not grads:
        raise InvalidArgumentError("need at least one agent gradient")
    out = [np.asarray(p, dtype=float).copy() for p in params]
    for g in grads:
        if len(g.arrays) != len(out):
            raise ShapeMismatchError("gradient structure does not match parameters")
        for p, ga in zip(out, g.arrays):
            if p.shape != ga.shape:
                raise ShapeMismatchError("gradient shape does not match parameter")
    scale = eta / len(grads)
    for g in grads:
        for p, ga in zip(out, g.arrays):
            p -= scale * ga
    return out


@dataclass
class DlgConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.1
    iterations: int = 300
    seed: int = 0
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be >= 1")
        if self.optimizer not in ("adam", "lbfgs"):
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class DlgResult:
    x: np.ndarray
    y: Optional[np.ndarray]
    final_loss: float
    trajectory: list[float] = field(default_factory=list)

    def report(self, target_x=None, original_x=None, seed: int = 0) -> str:
        payload = {
            "schema_version": 1,
            "final_loss": self.final_loss,
            "iterations": len(self.trajectory),
            "seed": seed,
        }
        if target_x is not None:
            payload["mse_vs_target"] = float(np.mean((self.x - np.asarray(target_x)) ** 2))
        if original_x is not None:
            payload["mse_vs_original"] = float(np.mean((self.x - np.asarray(original_x)) ** 2))
        return json.dumps(payload)


def _match_loss(model: Victim, target_flat: np.ndarray, x: np.ndarray, tgt: np.ndarray) -> float:
    _, g = model.loss_and_gradients(x, tgt)
    d = g.flat - target_flat
    return float(d @ d)


def dlg_attack(
    model: Victim,
    target: GradientVector,
    config: DlgConfig,
    known_label=None,
) -> DlgResult:
    """Reconstruct the victim's input (and soft label) whose gradients match
    the observed ones, by minimizing ||grad' - grad||^2 over (x', y').

    The match-loss gradient is obtained by central differences over the
    dummy variables (numerically propagated curvature); exact and cheap at
    these sizes. Labels are relaxed to a continuous vector through softmax
    unless known_label fixes them.
    """
    m = model.input_dim
    c = model.n_classes
    gen = np.random.default_rng(config.seed)
    target_flat = target.flat

    fixed_target = None
    if known_label is not None:
        fixed_target = _target_from_label(model, known_label)
    n_label = 0 if fixed_target is not None else c

    def split(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = v[:m]
        if fixed_target is not None:
            return x, fixed_target
        if isinstance(model, LinearRegressionVictim):
            return x, v[m:]
        return x, _softmax(v[m:])

    def objective(v: np.ndarray) -> float:
        x, tgt = split(v)
        return _match_loss(model, target_flat, x, tgt)

    def fd_gradient(v: np.ndarray) -> np.ndarray:
        g = np.empty_like(v)
        for i in range(v.size):
            h = config.fd_step * max(1.0, abs(v[i]))
            vp = v.copy(); vp[i] += h
            vm = v.copy(); vm[i] -= h
            g[i] = (objective(vp) - objective(vm)) / (2.0 * h)
        return g

    v = gen.standard_normal(m + n_label)
    trajectory: list[float] = []
    best_v = v.copy()
    best_loss = objective(v)
    trajectory.append(best_loss)

    if config.optimizer == "lbfgs":
        def callback(vk):
            nonlocal best_v, best_loss
            lk = objective(vk)
            trajectory.append(lk)
            if lk < best_loss:
                best_loss, best_v = lk, vk.copy()

        res = scipy.optimize.minimize(
            objective, v, jac=fd_gradient, method="L-BFGS-B",
            callback=callback,
            options={"maxiter": config.iterations, "ftol": 1e-18, "gtol": 1e-16},
        )
        if objective(res.x) < best_loss:
            best_loss, best_v = float(objective(res.x)), res.x.copy()
    else:
        m1 = np.zeros_like(v)
        m2 = np.zeros_like(v)
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        for t in range(1, config.iterations + 1):
            g = fd_gradient(v)
            m1 = beta1 * m1 + (1 - beta1) * g
            m2 = beta2 * m2 + (1 - beta2) * g**2
            v = v - config.learning_rate * (m1 / (1 - beta1**t)) / (
                np.sqrt(m2 / (1 - beta2**t)) + eps
            )
            loss = objective(v)
            trajectory.append(loss)
            if loss > DIVERGENCE_LIMIT:
                raise InvalidArgumentError(
                    f"DLG attack diverged at iteration {t}: loss {loss:.3e}; "
                    f"trajectory={trajectory}"
                )
            if loss < best_loss:
                best_loss, best_v = loss, v.copy()

    x, tgt = split(best_v)
    y_out = None if fixed_target is not None else tgt
    return DlgResult(x=x.copy(), y=y_out, final_loss=best_loss, trajectory=trajectory)


def linear_inversion_oracle(victim: LinearRegressionVictim, grads: GradientVector) -> np.ndarray:
    """Closed-form input recovery for the affine regression victim:
    grad_b = residual, grad_w = residual * x, so x = grad_w / grad_b."""
    gw, gb = grads.arrays
    r = float(gb[0])
    if r == 0.0:
        raise InvalidArgumentError("zero residual: input is unidentifiable from gradients")
    return gw / r
