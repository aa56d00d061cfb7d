import numpy as np
import pytest

from flowcrypt import TrainConfig, train_flow


def mixture_2d(n: int, seed: int = 0) -> np.ndarray:
    """Four-component Gaussian mixture on the corners of a square."""
    rng = np.random.default_rng(seed)
    means = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    comp = rng.integers(0, 4, n)
    return means[comp] + 0.15 * rng.standard_normal((n, 2))


def blobs_8d(n: int, seed: int = 0) -> np.ndarray:
    """Two well-separated 8-D blobs."""
    rng = np.random.default_rng(seed)
    means = np.zeros((2, 8))
    means[0, :2] = 2.0
    means[1, :2] = -2.0
    comp = rng.integers(0, 2, n)
    return means[comp] + 0.5 * rng.standard_normal((n, 8))


def numerical_jacobian(fn, x: np.ndarray, h_scale: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector-to-vector map."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = h_scale * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        cols.append((fn(xp) - fn(xm)) / (2.0 * h))
    return np.stack(cols, axis=1)


@pytest.fixture(scope="session")
def mixture_data():
    return mixture_2d(4000, seed=0)


@pytest.fixture(scope="session")
def mixture_model(mixture_data):
    # Short run: enough structure for round-trip/encryption tests. The
    # acceptance suite times its own full 2000-step run.
    return train_flow(mixture_data, TrainConfig(steps=400, seed=0))


@pytest.fixture(scope="session")
def blob_model():
    data = blobs_8d(2000, seed=5)
    return train_flow(data, TrainConfig(steps=300, seed=1), blocks=4, hidden=32)
