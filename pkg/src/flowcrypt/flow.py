"""The invertible flow: actnorm, LU-parameterized invertible linear mixing,
and affine coupling layers, composed into a map f with exact log-det
accounting, plus logit dequantization and bits-per-dimension.

All layers operate on batches (n, m); single vectors (m,) are accepted and
returned in kind. Each layer implements

    forward(X)  -> (Y, log_det per sample)
    inverse(Y)  -> X
    backward(X, dY, dlogdet) -> (dX, {param name: gradient})

where dY is the adjoint of the output and dlogdet the per-sample adjoint of
the layer's log-det contribution. backward recomputes activations from X,
which is cheap at these sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateDataError, InvalidArgumentError, ShapeMismatchError

LOG_2PI = float(np.log(2.0 * np.pi))

# Bound on the coupling log-scale output: s = S_MAX * tanh(raw).
S_MAX = 2.0


def _as_batch(x, dim: int, name: str = "input") -> tuple[np.ndarray, bool]:
    """Coerce to (n, dim); returns (batch, was_single_vector)."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ShapeMismatchError(f"{name} must have dimension {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr, single


class ActNorm:
    """Per-dimension scale and bias with data-dependent initialization."""

    tag = "actnorm"

    def __init__(self, dim: int, scale=None, bias=None, initialized: bool = False):
        self.dim = dim
        self.scale = np.ones(dim) if scale is None else np.asarray(scale, dtype=float).copy()
        self.bias = np.zeros(dim) if bias is None else np.asarray(bias, dtype=float).copy()
        self.initialized = initialized
        if self.scale.shape != (dim,) or self.bias.shape != (dim,):
            raise ShapeMismatchError("actnorm parameter shapes must be (dim,)")
        if initialized and np.any(self.scale == 0.0):
            raise InvalidArgumentError("actnorm scale entries must be nonzero")

    def params(self) -> dict:
        return {"scale": self.scale, "bias": self.bias}

    def _require_init(self):
        if not self.initialized:
            raise InvalidArgumentError("actnorm layer used before initialization")

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        self._require_init()
        y = x * self.scale + self.bias
        ld = np.full(x.shape[0], np.sum(np.log(np.abs(self.scale))))
        return y, ld

    def inverse(self, y: np.ndarray) -> np.ndarray:
        self._require_init()
        return (y - self.bias) / self.scale

    def backward(self, x, d_y, d_logdet):
        d_x = d_y * self.scale
        d_scale = np.sum(d_y * x, axis=0) + np.sum(d_logdet) / self.scale
        d_bias = np.sum(d_y, axis=0)
        return d_x, {"scale": d_scale, "bias": d_bias}


def actnorm_init(layer: ActNorm, batch: np.ndarray) -> ActNorm:
    """Set scale/bias so the post-actnorm batch has per-dim mean 0, var 1."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise InvalidArgumentError("initialization batch must be a nonempty (n, dim) array")
    if layer.initialized:
        raise InvalidArgumentError("actnorm layer is already initialized")
    if batch.shape[1] != layer.dim:
        raise ShapeMismatchError(f"batch dim {batch.shape[1]} != layer dim {layer.dim}")
    mean = batch.mean(axis=0)
    std = batch.std(axis=0)
    dead = np.flatnonzero(std == 0.0)
    if dead.size:
        raise DegenerateDataError(f"zero variance in dimension {int(dead[0])}")
    layer.scale[:] = 1.0 / std
    layer.bias[:] = -mean / std
    layer.initialized = True
    return layer


class InvertibleLinear:
    """Dense mixing layer y = W x with W = P L U.

    P is a fixed permutation, L unit-lower-triangular, U upper-triangular
    with diagonal sign * exp(log_diag) (signs fixed at initialization), so
    log|det W| = sum(log_diag). Initialized from a Haar rotation with
    det +1, i.e. log-det 0.
    """

    tag = "linear"

    def __init__(self, dim: int, perm, sign, lower, upper, log_diag):
        self.dim = dim
        self.perm = np.asarray(perm, dtype=np.int64).copy()
        self.sign = np.asarray(sign, dtype=float).copy()
        self.lower = np.asarray(lower, dtype=float).copy()   # strictly lower content
        self.upper = np.asarray(upper, dtype=float).copy()   # strictly upper content
        self.log_diag = np.asarray(log_diag, dtype=float).copy()
        if self.lower.shape != (dim, dim) or self.upper.shape != (dim, dim):
            raise ShapeMismatchError("lower/upper factors must be (dim, dim)")

    @classmethod
    def from_rotation(cls, dim: int, rng: np.random.Generator) -> "InvertibleLinear":
        g = rng.standard_normal((dim, dim))
        q, r = np.linalg.qr(g)
        q = q * np.where(np.diagonal(r) >= 0.0, 1.0, -1.0)[np.newaxis, :]
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        p, l, u = scipy.linalg.lu(q)
        perm = np.argmax(p, axis=0)  # row index that each column of eye maps to
        diag = np.diagonal(u).copy()
        sign = np.where(diag >= 0.0, 1.0, -1.0)
        log_diag = np.log(np.abs(diag))
        return cls(
            dim,
            perm=perm,
            sign=sign,
            lower=np.tril(l, k=-1),
            upper=np.triu(u, k=1),
            log_diag=log_diag,
        )

    def params(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "log_diag": self.log_diag}

    def _factors(self) -> tuple[np.ndarray, np.ndarray]:
        l = np.tril(self.lower, k=-1) + np.eye(self.dim)
        u = np.triu(self.upper, k=1) + np.diag(self.sign * np.exp(self.log_diag))
        return l, u

    def weight(self) -> np.ndarray:
        l, u = self._factors()
        w = l @ u
        out = np.empty_like(w)
        out[self.perm, :] = w  # apply the row permutation P
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = self.weight()
        y = x @ w.T
        ld = np.full(x.shape[0], np.sum(self.log_diag))
        return y, ld

    def inverse(self, y: np.ndarray) -> np.ndarray:
        l, u = self._factors()
        if not np.all(np.isfinite(u)) or np.any(np.diagonal(u) == 0.0):
            raise InvalidArgumentError("invertible-linear reconstruction is singular")
        z = y[:, self.perm]  # apply P^T
        t = scipy.linalg.solve_triangular(l, z.T, lower=True, unit_diagonal=True)
        x = scipy.linalg.solve_triangular(u, t, lower=False)
        return np.ascontiguousarray(x.T)

    def backward(self, x, d_y, d_logdet):
        l, u = self._factors()
        w = self.weight()
        d_x = d_y @ w
        d_w = d_y.T @ x
        d_lu = d_w[self.perm, :]  # P^T dW
        d_l = d_lu @ u.T
        d_u = l.T @ d_lu
        d_lower = np.tril(d_l, k=-1)
        d_upper = np.triu(d_u, k=1)
        d_log_diag = np.diagonal(d_u) * self.sign * np.exp(self.log_diag) + np.sum(d_logdet)
        return d_x, {"lower": d_lower, "upper": d_upper, "log_diag": d_log_diag}


class AffineCoupling:
    """Affine coupling: masked coordinates pass through and condition a
    per-dim log-scale (bounded by S_MAX * tanh) and shift for the rest.

    The conditioner is a one-hidden-layer tanh network from the masked
    coordinates to 2 * (#unmasked) outputs.
    """

    tag = "coupling"

    def __init__(self, dim: int, mask, w1, b1, w2, b2):
        self.dim = dim
        self.mask = np.asarray(mask, dtype=bool).copy()
        if self.mask.shape != (dim,):
            raise ShapeMismatchError("mask must be (dim,)")
        k = int(self.mask.sum())
        if k == 0 or k == dim:
            raise InvalidArgumentError("coupling mask must leave both parts nonempty")
        self.w1 = np.asarray(w1, dtype=float).copy()
        self.b1 = np.asarray(b1, dtype=float).copy()
        self.w2 = np.asarray(w2, dtype=float).copy()
        self.b2 = np.asarray(b2, dtype=float).copy()
        hidden = self.b1.shape[0]
        out = 2 * (dim - k)
        if self.w1.shape != (hidden, k) or self.w2.shape != (out, hidden) or self.b2.shape != (out,):
            raise ShapeMismatchError("conditioner parameter shapes are inconsistent")

    @classmethod
    def create(
        cls,
        dim: int,
        mask,
        hidden: int,
        rng: np.random.Generator,
        head_scale: float = 0.0,
    ) -> "AffineCoupling":
        mask = np.asarray(mask, dtype=bool)
        k = int(mask.sum())
        out = 2 * (dim - k)
        w1 = rng.standard_normal((hidden, k)) / np.sqrt(k)
        b1 = np.zeros(hidden)
        # head_scale 0 gives a zero-initialized head, so the layer starts as
        # the identity; nonzero makes a genuinely warped random flow.
        w2 = head_scale * rng.standard_normal((out, hidden)) / np.sqrt(hidden)
        b2 = np.zeros(out)
        return cls(dim, mask, w1, b1, w2, b2)

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def _condition(self, u: np.ndarray):
        h = np.tanh(u @ self.w1.T + self.b1)
        o = h @ self.w2.T + self.b2
        n_t = self.dim - int(self.mask.sum())
        raw, t = o[:, :n_t], o[:, n_t:]
        s = S_MAX * np.tanh(raw)
        return h, raw, s, t

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = x[:, self.mask]
        v = x[:, ~self.mask]
        _, _, s, t = self._condition(u)
        y = x.copy()
        y[:, ~self.mask] = v * np.exp(s) + t
        return y, np.sum(s, axis=1)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        u = y[:, self.mask]
        _, _, s, t = self._condition(u)
        x = y.copy()
        x[:, ~self.mask] = (y[:, ~self.mask] - t) * np.exp(-s)
        return x

    def backward(self, x, d_y, d_logdet):
        u = x[:, self.mask]
        v = x[:, ~self.mask]
        h, raw, s, t = self._condition(u)
        exp_s = np.exp(s)

        d_yv = d_y[:, ~self.mask]
        d_v = d_yv * exp_s
        d_s = d_yv * v * exp_s + d_logdet[:, np.newaxis]
        d_raw = d_s * S_MAX * (1.0 - np.tanh(raw) ** 2)
        d_o = np.concatenate([d_raw, d_yv], axis=1)

        d_w2 = d_o.T @ h
        d_b2 = d_o.sum(axis=0)
        d_h = d_o @ self.w2
        d_hpre = d_h * (1.0 - h**2)
        d_w1 = d_hpre.T @ u
        d_b1 = d_hpre.sum(axis=0)
        d_u = d_hpre @ self.w1

        d_x = np.zeros_like(x)
        d_x[:, self.mask] = d_y[:, self.mask] + d_u
        d_x[:, ~self.mask] = d_v
        return d_x, {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}


Layer = ActNorm | InvertibleLinear | AffineCoupling


@dataclass
class LatentVector:
    """A point in feature space together with the accumulated log |det df/dx|."""

    values: np.ndarray
    log_det: float


class FlowModel:
    """An ordered stack of invertible layers with a standard-normal base."""

    def __init__(self, dim: int, layers: list[Layer]):
        self.dim = dim
        self.layers = list(layers)
        for layer in self.layers:
            if layer.dim != dim:
                raise ShapeMismatchError("all layers must share the model dimension")

    def initialize_actnorms(self, batch: np.ndarray) -> None:
        """Data-dependent init: each actnorm standardizes its own input."""
        x, _ = _as_batch(batch, self.dim, "batch")
        for layer in self.layers:
            if isinstance(layer, ActNorm) and not layer.initialized:
                actnorm_init(layer, x)
            x, _ = layer.forward(x)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ld = np.zeros(x.shape[0])
        for layer in self.layers:
            x, inc = layer.forward(x)
            ld = ld + inc
        return x, ld

    def inverse(self, z: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            z = layer.inverse(z)
        return z

    def n_params(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params().values())


def build_default_flow(
    dim: int,
    blocks: int = 6,
    hidden: int = 64,
    rng: np.random.Generator | int = 0,
    head_scale: float = 0.0,
) -> FlowModel:
    """K blocks of (ActNorm -> InvertibleLinear -> AffineCoupling) with
    alternating complementary half masks. Actnorms start uninitialized."""
    if dim < 2:
        raise InvalidArgumentError("default flow needs dim >= 2 (coupling masks)")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    base_mask = np.arange(dim) < dim // 2
    layers: list[Layer] = []
    for k in range(blocks):
        layers.append(ActNorm(dim))
        layers.append(InvertibleLinear.from_rotation(dim, gen))
        mask = base_mask if k % 2 == 0 else ~base_mask
        layers.append(AffineCoupling.create(dim, mask, hidden, gen, head_scale=head_scale))
    return FlowModel(dim, layers)


def layer_forward(layer: Layer, x) -> tuple[np.ndarray, float]:
    """Single-layer forward; returns (y, log_det) matching the input shape."""
    batch, single = _as_batch(x, layer.dim)
    y, ld = layer.forward(batch)
    if single:
        return y[0], float(ld[0])
    return y, ld


def layer_inverse(layer: Layer, y) -> np.ndarray:
    batch, single = _as_batch(y, layer.dim, "output")
    x = layer.inverse(batch)
    return x[0] if single else x


def flow_forward(model: FlowModel, s) -> LatentVector:
    batch, single = _as_batch(s, model.dim)
    z, ld = model.forward(batch)
    if single:
        return LatentVector(values=z[0], log_det=float(ld[0]))
    return LatentVector(values=z, log_det=ld)


def flow_inverse(model: FlowModel, z) -> np.ndarray:
    batch, single = _as_batch(z, model.dim, "latent")
    s = model.inverse(batch)
    return s[0] if single else s


def gaussian_log_density(z: np.ndarray) -> np.ndarray:
    """log N(z; 0, I) per sample for an (n, m) batch."""
    m = z.shape[1]
    return -0.5 * m * LOG_2PI - 0.5 * np.sum(z**2, axis=1)


def log_prob(model: FlowModel, s):
    """log-density of s under the flow: log N(f(s); 0, I) + log|det df/ds|."""
    batch, single = _as_batch(s, model.dim)
    z, ld = model.forward(batch)
    lp = gaussian_log_density(z) + ld
    if not np.all(np.isfinite(lp)):
        raise InvalidArgumentError("log_prob produced non-finite values")
    return float(lp[0]) if single else lp


def dequantize(x, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Map integer-valued pixels in [0, 256) to logit space.

    y = logit(alpha + (1 - alpha) * x / 256), with the per-sample log-det of
    the transform returned alongside.
    """
    if not (0.0 <= alpha < 0.5):
        raise InvalidArgumentError(f"alpha must be in [0, 0.5), got {alpha}")
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    batch = arr[np.newaxis, :] if single else arr
    if np.any(batch < 0) or np.any(batch >= 256):
        raise InvalidArgumentError("dequantize input entries must lie in [0, 256)")
    p = alpha + (1.0 - alpha) * batch / 256.0
    if np.any(p <= 0.0):
        # Only reachable at alpha=0, x=0, where the logit diverges.
        raise InvalidArgumentError("dequantize needs alpha > 0 when inputs include 0")
    y = np.log(p) - np.log1p(-p)
    ld = np.sum(np.log(1.0 - alpha) - np.log(256.0) - np.log(p) - np.log1p(-p), axis=1)
    if single:
        return y[0], float(ld[0])
    return y, ld


def dequantize_inverse(y, alpha: float) -> np.ndarray:
    """x = 256 * (sigmoid(y) - alpha) / (1 - alpha)."""
    if not (0.0 <= alpha < 0.5):
        raise InvalidArgumentError(f"alpha must be in [0, 0.5), got {alpha}")
    arr = np.asarray(y, dtype=float)
    sig = 1.0 / (1.0 + np.exp(-arr))
    return 256.0 * (sig - alpha) / (1.0 - alpha)


def bits_per_dim(model: FlowModel, data, alpha: float = 0.05) -> float:
    """Mean negative base-2 log-likelihood per dimension of integer data,
    including the dequantization Jacobian."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.size == 0:
        raise InvalidArgumentError("bits_per_dim needs nonempty data")
    y, ld = dequantize(arr, alpha)
    lp = log_prob(model, y) + ld
    m = arr.shape[1]
    return float(np.mean(-lp) / (m * np.log(2.0)))
