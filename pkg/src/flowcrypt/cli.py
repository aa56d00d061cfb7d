"""Command-line frontend.

Exit codes: 0 success, 2 I/O, 3 invalid argument, 4 degenerate data,
5 shape/label mismatch, 6 corruption. FLOWCRYPT_SEED overrides --seed when
the flag is absent.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import crypt, formats, leakage, security
from .errors import (
    CorruptFileError,
    DegenerateDataError,
    InvalidArgumentError,
    ShapeMismatchError,
)
from .flow import bits_per_dim, build_default_flow
from .linalg import sample_haar_orthogonal
from .train import TrainConfig, train_flow

EXIT_OK = 0
EXIT_IO = 2
EXIT_INVALID_ARG = 3
EXIT_DEGENERATE = 4
EXIT_SHAPE = 5
EXIT_CORRUPT = 6


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # Usage errors are "invalid argument" (exit 3); argparse's default 2 is
    # reserved for I/O failures.
    def error(self, message):
        raise CliError(EXIT_INVALID_ARG, message)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FLOWCRYPT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(EXIT_INVALID_ARG, f"bad FLOWCRYPT_SEED: {env!r}") from exc
    return 0


def _load_data(path, fmt: str, labeled=None):
    if not os.path.exists(path):
        raise CliError(EXIT_IO, f"no such file: {path}")
    if fmt == "csv":
        return formats.load_csv(path, labeled=labeled)
    return formats.load_dataset(path)


def _save_data(samples, path, fmt: str, labels=None):
    if fmt == "csv":
        formats.save_csv(samples, path, labels=labels)
    else:
        formats.save_dataset(samples, path, labels=labels)


def _emit(payload: dict, out_path=None):
    payload = {"schema_version": 1, **payload}
    text = json.dumps(payload)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_keygen(args) -> int:
    if args.dim < 1:
        raise CliError(EXIT_INVALID_ARG, f"--dim must be >= 1, got {args.dim}")
    key = sample_haar_orthogonal(args.dim, _resolve_seed(args))
    formats.save_key(key, args.out)
    return EXIT_OK


def _train_config(args, seed: int) -> TrainConfig:
    cfg = {}
    if args.config:
        if not os.path.exists(args.config):
            raise CliError(EXIT_IO, f"no such file: {args.config}")
        with open(args.config) as fh:
            cfg = json.load(fh)
    cfg.setdefault("seed", seed)
    try:
        return TrainConfig(**cfg)
    except TypeError as exc:
        raise CliError(EXIT_INVALID_ARG, f"bad training config: {exc}") from exc


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    samples, _ = _load_data(args.data, args.format)
    config = _train_config(args, seed)
    history: list = []
    if args.dequantize_alpha is not None:
        from .flow import dequantize

        if not (0.0 <= args.dequantize_alpha < 0.5):
            raise CliError(EXIT_INVALID_ARG, "--dequantize-alpha must be in [0, 0.5)")
        samples, _ = dequantize(samples, args.dequantize_alpha)
    model = train_flow(samples, config, blocks=args.blocks, hidden=args.hidden, history=history)
    formats.save_model(model, args.out_model)
    if args.log:
        with open(args.log, "w") as fh:
            for rec in history:
                fh.write(json.dumps(rec) + "\n")
    return EXIT_OK


def _single_context(args) -> crypt.EncryptionContext:
    for p in (args.model, args.key):
        if not os.path.exists(p):
            raise CliError(EXIT_IO, f"no such file: {p}")
    return crypt.load_context(args.model, args.key)


def _classwise_context(args) -> crypt.ClasswiseContext:
    if not os.path.exists(args.class_map):
        raise CliError(EXIT_IO, f"no such file: {args.class_map}")
    with open(args.class_map) as fh:
        manifest = json.load(fh)
    contexts = {}
    for label, paths in manifest.items():
        for p in (paths["model"], paths["key"]):
            if not os.path.exists(p):
                raise CliError(EXIT_IO, f"no such file: {p}")
        contexts[int(label)] = crypt.load_context(paths["model"], paths["key"])
    return crypt.ClasswiseContext(contexts)


def _cmd_crypt(args, decrypt: bool) -> int:
    samples, labels = _load_data(args.data, args.format)
    if args.class_map:
        ctx = _classwise_context(args)
        if labels is None:
            raise CliError(EXIT_SHAPE, "per-class mode needs labeled data")
        if decrypt:
            out = np.empty_like(samples)
            for label in np.unique(labels):
                if int(label) not in ctx.contexts:
                    raise CliError(EXIT_SHAPE, f"no context for label {int(label)}")
                rows = labels == label
                out[rows] = crypt.decrypt_sample(ctx.contexts[int(label)], samples[rows])
        else:
            out = crypt.encrypt_dataset(ctx, samples, labels).samples
        _save_data(out, args.out, args.format, labels=labels)
        return EXIT_OK
    ctx = _single_context(args)
    if samples.shape[1] != ctx.flow.dim:
        raise CliError(
            EXIT_SHAPE, f"data dim {samples.shape[1]} != context dim {ctx.flow.dim}"
        )
    fn = crypt.decrypt_sample if decrypt else crypt.encrypt_sample
    _save_data(fn(ctx, samples), args.out, args.format, labels=labels)
    return EXIT_OK


def cmd_encrypt(args) -> int:
    return _cmd_crypt(args, decrypt=False)


def cmd_decrypt(args) -> int:
    return _cmd_crypt(args, decrypt=True)


def cmd_eval_bpd(args) -> int:
    if not (0.0 <= args.alpha < 0.5):
        raise CliError(EXIT_INVALID_ARG, f"--alpha must be in [0, 0.5), got {args.alpha}")
    if not os.path.exists(args.model):
        raise CliError(EXIT_IO, f"no such file: {args.model}")
    model = formats.load_model(args.model)
    samples, _ = _load_data(args.data, args.format)
    _emit({"bpd": bits_per_dim(model, samples, args.alpha)}, args.out)
    return EXIT_OK


def cmd_audit(args) -> int:
    seed = _resolve_seed(args)
    if args.trials < 200:
        raise CliError(EXIT_INVALID_ARG, f"--trials must be >= 200, got {args.trials}")
    if not (0.0 < args.theta <= 1.0):
        raise CliError(EXIT_INVALID_ARG, f"--theta must be in (0, 1], got {args.theta}")
    if args.source == "exact-gaussian":
        source = "exact-gaussian"
    else:
        if not args.data:
            raise CliError(EXIT_INVALID_ARG, "--source trained-flow needs --data")
        samples, _ = _load_data(args.data, args.format)
        if samples.shape[1] != 2:
            raise CliError(EXIT_SHAPE, "trained-flow audit needs 2-D data")
        config = TrainConfig(steps=args.train_steps, seed=seed)
        model = train_flow(samples, config)
        source, _ = model.forward(samples)
    report = security.theorem_bound_audit(
        source, args.theta, args.n, args.trials, rng=seed,
        grid_size=args.grid_size, threads=args.threads,
    )
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _build_victim(cfg: dict, seed: int):
    kind = cfg.get("type", "mlp")
    if kind == "linear":
        return leakage.LinearRegressionVictim(int(cfg["input_dim"]), rng=cfg.get("seed", seed))
    if kind == "mlp":
        return leakage.ToyClassifier(list(cfg["dims"]), rng=cfg.get("seed", seed))
    raise CliError(EXIT_INVALID_ARG, f"unknown victim type {kind!r}")


def cmd_attack_dlg(args) -> int:
    seed = _resolve_seed(args)
    if not os.path.exists(args.victim_config):
        raise CliError(EXIT_IO, f"no such file: {args.victim_config}")
    with open(args.victim_config) as fh:
        victim_cfg = json.load(fh)
    victim = _build_victim(victim_cfg, seed)
    samples, labels = _load_data(args.data, args.format)
    original = samples[0]
    label = int(labels[0]) if labels is not None else 0
    target_input = original
    if args.encrypted:
        if not (args.model and args.key):
            raise CliError(EXIT_INVALID_ARG, "--encrypted needs --model and --key")
        ctx = _single_context(args)
        if ctx.flow.dim != samples.shape[1]:
            raise CliError(EXIT_SHAPE, "context dim does not match data")
        target_input = crypt.encrypt_sample(ctx, original)
    grads = leakage.compute_gradients(victim, target_input, label)
    config = leakage.DlgConfig(
        optimizer=victim_cfg.get("optimizer", "adam"),
        learning_rate=victim_cfg.get("learning_rate", 0.1),
        iterations=victim_cfg.get("iterations", 300),
        seed=seed,
    )
    result = leakage.dlg_attack(victim, grads, config)
    payload = json.loads(result.report(target_x=target_input, original_x=original, seed=seed))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(json.dumps(payload) + "\n")
    print(json.dumps(payload))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="flowcrypt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--format", choices=["ftns", "csv"], default="ftns")
        p.add_argument("--out", default=None)

    p = sub.add_parser("keygen", help="sample an orthogonal key file")
    common(p)
    p.add_argument("--dim", type=int, required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("train", help="train a flow on a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="JSON TrainConfig overrides")
    p.add_argument("--out-model", required=True)
    p.add_argument("--log", default=None, help="JSONL training curve path")
    p.add_argument("--blocks", type=int, default=6)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--dequantize-alpha", type=float, default=None)
    p.set_defaults(func=cmd_train)

    for name, fn in (("encrypt", cmd_encrypt), ("decrypt", cmd_decrypt)):
        p = sub.add_parser(name, help=f"{name} a dataset through a context")
        common(p)
        p.add_argument("--model", default=None)
        p.add_argument("--key", default=None)
        p.add_argument("--data", required=True)
        p.add_argument("--class-map", default=None, help="JSON label -> {model, key}")
        p.set_defaults(func=fn)

    p = sub.add_parser("eval-bpd", help="bits per dimension of integer data")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_eval_bpd)

    p = sub.add_parser("audit", help="recovery-bound audit")
    common(p)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--source", choices=["exact-gaussian", "trained-flow"], default="exact-gaussian")
    p.add_argument("--data", default=None)
    p.add_argument("--grid-size", type=int, default=360)
    p.add_argument("--train-steps", type=int, default=500)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("attack-dlg", help="dummy-gradient reconstruction attack")
    common(p)
    p.add_argument("--victim-config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--encrypted", action="store_true")
    p.add_argument("--model", default=None)
    p.add_argument("--key", default=None)
    p.set_defaults(func=cmd_attack_dlg)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CorruptFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ShapeMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_ARG


if __name__ == "__main__":
    sys.exit(main())
