"""Command-line entry point: ``atd {gen,decompose,features,eval,bench-mem}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
divergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import string
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .memory import AllocationTracker
from .solver import (ConfigError, DivergenceError, KruskalBases, SaoConfig, decompose,
                     extract_features, load_config, write_reports)
from .synth import LabeledFeatures, SyntheticSpec, accuracy, generate, train_linear
from .tensor import TensorFormatError, read_tensor, write_tensor

log = logging.getLogger("atd")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
MODE_NAMES = {"atd": "atd", "ssminus": "atd_ss_minus", "als": "cp_als_full", "sals": "sals"}
BENCH_SIZES = ("32", "64", "128", "256", "512", "full")


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    inputs: list[str]
    outputs: list[str]
    seed: int
    input_hash: str = ""
    argv: list[str] = field(default_factory=list)

    def __post_init__(self):
        digest = hashlib.sha1()
        for path in self.inputs:
            digest.update(git_blob_hash(Path(path).read_bytes()).encode())
        if self.config_path:
            digest.update(git_blob_hash(Path(self.config_path).read_bytes()).encode())
        self.input_hash = digest.hexdigest()

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def factor_names(count: int) -> list[str]:
    return list(string.ascii_uppercase[:count])


def write_bases(bases: KruskalBases, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, f in zip(factor_names(len(bases.factors)), bases.factors):
        write_tensor(f, out_dir / f"{name}.dtz")
        paths.append(out_dir / f"{name}.dtz")
    return paths


def read_bases(in_dir) -> KruskalBases:
    in_dir = Path(in_dir)
    factors = []
    for name in string.ascii_uppercase:
        path = in_dir / f"{name}.dtz"
        if not path.exists():
            break
        factors.append(np.array(read_tensor(path)))
    if not factors:
        raise FileNotFoundError(f"no basis files (A.dtz, ...) in {in_dir}")
    return KruskalBases(tuple(factors))


_SPEC_TYPES = {"n": int, "rank": int, "classes": int, "tau": float, "sigma": float,
               "seed": int, "amplitude": float}


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[spec]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed spec: {exc}") from exc
    values = {}
    for key, raw in parser["spec"].items():
        try:
            if key == "shape":
                values[key] = tuple(int(v) for v in raw.replace(",", " ").split())
            elif key in _SPEC_TYPES:
                values[key] = _SPEC_TYPES[key](raw.strip())
            else:
                raise ConfigError(f"unknown spec key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return SyntheticSpec(**values)


def _resolve_config(args) -> SaoConfig:
    cfg = load_config(args.config) if args.config else SaoConfig()
    overrides = {"seed": args.seed, "batch_size": args.batch_size, "rank": args.rank,
                 "max_sweeps": args.max_sweeps}
    if getattr(args, "mode", None):
        overrides["mode"] = MODE_NAMES[args.mode]
    if args.moving_average:
        overrides["moving_average"] = True
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None}).validate()


def cmd_gen(args) -> int:
    spec = parse_synthetic_spec(Path(args.spec).read_text()) if args.spec else SyntheticSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "tensor.dtz", out / "labels.csv", out / "coefficients.dtz", out / "truth"]
    RunManifest("gen", args.spec, [], [str(p) for p in outputs], spec.seed,
                argv=args.argv).write(out / "manifest.json")
    data = generate(spec)
    write_tensor(data.tensor, out / "tensor.dtz")
    write_tensor(data.coefficients, out / "coefficients.dtz")
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        writer.writerows([[int(v)] for v in data.labels])
    write_bases(data.bases, out / "truth")
    return EXIT_OK


def cmd_decompose(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    RunManifest("decompose", args.config, [args.tensor], [str(out)], cfg.seed,
                argv=args.argv).write(out / "manifest.json")
    tensor = read_tensor(args.tensor)
    bases, reports = decompose(tensor, cfg)
    write_bases(bases, out)
    write_reports(reports, out / "sweeps.csv")
    log.info("%d sweeps, final loss %.6e", len(reports), reports[-1].loss_total)
    return EXIT_OK


def _read_labels(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["label"]:
        raise ValueError(f"{path}: expected a single 'label' column")
    return np.array([int(r[0]) for r in rows[1:]])


def cmd_features(args) -> int:
    cfg = _resolve_config(args)
    RunManifest("features", args.config, [args.tensor], [args.out], cfg.seed,
                argv=args.argv).write(Path(args.out).with_suffix(".manifest.json"))
    tensor = read_tensor(args.tensor)
    bases = read_bases(args.bases)
    feats = extract_features(tensor, bases, cfg.alpha)
    labels = _read_labels(args.labels) if args.labels else np.ones(len(feats), dtype=np.int64)
    LabeledFeatures(feats, labels).write_csv(args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    RunManifest("eval", None, [args.train, args.test], [args.out], 0,
                argv=args.argv).write(Path(args.out).with_suffix(".manifest.json"))
    train = LabeledFeatures.read_csv(args.train)
    test = LabeledFeatures.read_csv(args.test)
    acc = accuracy(train_linear(train), test)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_train", "n_test", "accuracy"])
        writer.writerow([len(train), len(test), repr(acc)])
    print(f"accuracy {acc:.4f}")
    return EXIT_OK


def bench_memory(tensor, cfg: SaoConfig, sizes=BENCH_SIZES) -> list[dict]:
    """Peak tracked working set and mean sweep time for each batch size."""
    n = tensor.shape[0]
    rows = []
    for size in sizes:
        b = n if size == "full" else int(size)
        if size != "full" and b >= n:
            continue  # covered by the full-batch row
        tracker = AllocationTracker()
        run_cfg = cfg.replace(batch_size=b, stop_tol=1e-300)
        _, reports = decompose(tensor, run_cfg, tracker=tracker)
        rows.append({"batch_size": size, "peak_aux_bytes": max(r.peak_aux_bytes for r in reports),
                     "seconds_per_sweep": sum(r.seconds for r in reports) / len(reports)})
    return rows


def cmd_bench_mem(args) -> int:
    cfg = _resolve_config(args)
    if args.max_sweeps is None:
        cfg = cfg.replace(max_sweeps=2)
    if args.tensor:
        tensor = read_tensor(args.tensor)
        inputs = [args.tensor]
    else:
        tensor = generate(SyntheticSpec(n=512, seed=cfg.seed)).tensor
        inputs = []
    RunManifest("bench-mem", args.config, inputs, [args.out], cfg.seed,
                argv=args.argv).write(Path(args.out).with_suffix(".manifest.json"))
    rows = bench_memory(tensor, cfg)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["batch_size", "peak_aux_bytes",
                                                "seconds_per_sweep"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "seconds_per_sweep": f"{row['seconds_per_sweep']:.6f}"})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--rank", type=int)
    common.add_argument("--max-sweeps", type=int)
    common.add_argument("--moving-average", action="store_true")
    common.add_argument("--out", required=True)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="atd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--spec", help="key = value synthetic spec (n, shape, rank, ...)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("decompose", parents=[common], help="learn bases from a tensor")
    p.add_argument("--tensor", required=True)
    p.add_argument("--mode", choices=sorted(MODE_NAMES), default=None)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("features", parents=[common], help="extract features with fixed bases")
    p.add_argument("--tensor", required=True)
    p.add_argument("--bases", required=True, help="directory holding A.dtz, B.dtz, ...")
    p.add_argument("--labels", help="labels CSV written by gen")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("eval", parents=[common], help="linear evaluation of feature CSVs")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-mem", parents=[common], help="peak memory per batch size")
    p.add_argument("--tensor")
    p.add_argument("--mode", choices=sorted(MODE_NAMES), default=None)
    p.set_defaults(func=cmd_bench_mem)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, TensorFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
