"""Encryption and decryption: map data to feature space with the flow,
rotate by the secret orthogonal key, map back. Includes per-class contexts,
the dual-key labeling protocol, and context serialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import formats
from .errors import InvalidArgumentError, ShapeMismatchError
from .flow import FlowModel
from .linalg import OrthogonalKey
from .train import TrainConfig, train_flow

# Refuse to train a per-class flow on fewer samples than this; small-data
# flows degrade the scheme.
MIN_CLASS_SAMPLES = 50


@dataclass
class EncryptionContext:
    """A trained flow paired with a secret orthogonal key."""

    flow: FlowModel
    key: OrthogonalKey

    def __post_init__(self):
        if self.flow.dim != self.key.dim:
            raise ShapeMismatchError(
                f"flow dim {self.flow.dim} != key dim {self.key.dim}"
            )

    def fingerprint(self) -> str:
        return formats.fingerprint(self.flow, self.key)


@dataclass
class ClasswiseContext:
    """One EncryptionContext per class label."""

    contexts: dict[int, EncryptionContext]

    def __post_init__(self):
        dims = {ctx.flow.dim for ctx in self.contexts.values()}
        if len(dims) > 1:
            raise ShapeMismatchError("classwise contexts must share the input dim")

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for label in sorted(self.contexts):
            h.update(str(label).encode())
            h.update(self.contexts[label].fingerprint().encode())
        return h.hexdigest()


@dataclass
class DualKeyContext:
    """Two independent keys over one flow plus a secret labeling function."""

    flow: FlowModel
    key1: OrthogonalKey
    key2: OrthogonalKey
    labeler: Callable[[np.ndarray], int]

    def __post_init__(self):
        if self.flow.dim != self.key1.dim or self.flow.dim != self.key2.dim:
            raise ShapeMismatchError("flow and keys must share a dimension")


@dataclass
class EncryptedDataset:
    samples: np.ndarray
    labels: Optional[np.ndarray] = None
    provenance: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise ShapeMismatchError("encrypted samples must be (n, m)")
        if self.labels is not None and len(self.labels) != self.samples.shape[0]:
            raise ShapeMismatchError("labels must be one per sample")


def _apply(ctx: EncryptionContext, s, matrix: np.ndarray):
    arr = np.asarray(s, dtype=float)
    single = arr.ndim == 1
    batch = arr[np.newaxis, :] if single else arr
    if batch.shape[1] != ctx.flow.dim:
        raise ShapeMismatchError(
            f"sample dim {batch.shape[1]} != context dim {ctx.flow.dim}"
        )
    z, _ = ctx.flow.forward(batch)
    out = ctx.flow.inverse(z @ matrix.T)
    return out[0] if single else out


def encrypt_sample(ctx: EncryptionContext, s) -> np.ndarray:
    """Enc(s) = f^-1(A f(s)). Feature-space norms are preserved."""
    return _apply(ctx, s, ctx.key.matrix)


def decrypt_sample(ctx: EncryptionContext, e) -> np.ndarray:
    """Inverse of encrypt_sample: f^-1(A^T f(e)).

    A wrong key produces garbage, not an error; use fingerprints to detect
    mismatched files.
    """
    return _apply(ctx, e, ctx.key.matrix.T)


def encrypt_dataset(ctx: ClasswiseContext, samples, labels) -> EncryptedDataset:
    """Encrypt each row with its own class context; labels pass through."""
    arr = np.asarray(samples, dtype=float)
    labels = np.asarray(labels)
    if arr.ndim != 2 or labels.shape != (arr.shape[0],):
        raise ShapeMismatchError("need (n, m) samples and n labels")
    out = np.empty_like(arr)
    for label in np.unique(labels):
        if int(label) not in ctx.contexts:
            raise ShapeMismatchError(f"no encryption context for label {int(label)}")
        rows = labels == label
        out[rows] = encrypt_sample(ctx.contexts[int(label)], arr[rows])
    return EncryptedDataset(samples=out, labels=labels.copy(), provenance=ctx.fingerprint())


def dual_key_label(ctx: DualKeyContext, samples) -> EncryptedDataset:
    """Emit (Enc_1(s_i), g(Enc_2(s_i))) pairs."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2:
        raise ShapeMismatchError("samples must be (n, m)")
    ctx1 = EncryptionContext(ctx.flow, ctx.key1)
    ctx2 = EncryptionContext(ctx.flow, ctx.key2)
    enc1 = encrypt_sample(ctx1, arr)
    enc2 = encrypt_sample(ctx2, arr)
    labels = np.empty(arr.shape[0], dtype=np.int64)
    for i in range(arr.shape[0]):
        try:
            labels[i] = int(ctx.labeler(enc2[i]))
        except Exception as exc:
            raise InvalidArgumentError(f"labeler failed on sample {i}: {exc}") from exc
    return EncryptedDataset(samples=enc1, labels=labels, provenance=ctx1.fingerprint())


def train_classwise_contexts(
    samples,
    labels,
    config: TrainConfig,
    *,
    blocks: int = 6,
    hidden: int = 64,
) -> ClasswiseContext:
    """Train one flow per class and sample one independent key per class."""
    from .linalg import sample_haar_orthogonal

    arr = np.asarray(samples, dtype=float)
    labels = np.asarray(labels)
    root = np.random.SeedSequence(config.seed)
    contexts = {}
    classes = np.unique(labels)
    seqs = root.spawn(2 * len(classes))
    for i, label in enumerate(classes):
        rows = arr[labels == label]
        if rows.shape[0] < MIN_CLASS_SAMPLES:
            raise InvalidArgumentError(
                f"class {int(label)} has {rows.shape[0]} samples; "
                f"need >= {MIN_CLASS_SAMPLES}"
            )
        class_cfg = TrainConfig(
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            steps=config.steps,
            seed=int(seqs[2 * i].generate_state(1, dtype=np.uint64)[0]) % 2**63,
            optimizer=config.optimizer,
            beta1=config.beta1,
            beta2=config.beta2,
            epsilon=config.epsilon,
            clip_norm=config.clip_norm,
        )
        flow = train_flow(rows, class_cfg, blocks=blocks, hidden=hidden)
        key = sample_haar_orthogonal(
            arr.shape[1],
            int(seqs[2 * i + 1].generate_state(1, dtype=np.uint64)[0]) % 2**63,
        )
        contexts[int(label)] = EncryptionContext(flow, key)
    return ClasswiseContext(contexts)


def save_context(ctx: EncryptionContext, model_path, key_path) -> None:
    formats.save_model(ctx.flow, model_path)
    formats.save_key(ctx.key, key_path)


def load_context(model_path, key_path) -> EncryptionContext:
    flow = formats.load_model(model_path)
    key = formats.load_key(key_path)
    return EncryptionContext(flow, key)
