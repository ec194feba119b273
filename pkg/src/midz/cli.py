"""Command-line front end.

Every command writes into a fresh subdirectory of ``out_dir`` (named after
the command, suffixed ``-2``, ``-3``, ... when it already exists) together
with ``manifest.json``. Earlier outputs are never modified.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numba
import numpy as np

from . import __version__
from .autodiff import NaNGradientError, NonFiniteError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import KEYS, ConfigError, RunConfig, apply_overrides, load_config, parse_value
from .data import DatasetFormatError, generate_dataset, read_dataset, write_dataset
from .evaluation import (ABLATION_VARIANTS, DEFAULT_LAMBDAS, ProbeConfig, ablation_suite, compute_representations,
                         evaluate, format_ablation, lambda_sweep, mi_distance_map, retrieve, write_sweep_csv)
from .gradcheck import TOLERANCE, run_gradcheck
from .trainer import TrainingDiverged, train_exclusive, train_shared

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("gen-data", "train", "train-shared", "train-exclusive", "probe", "retrieve",
            "sweep-lambda", "ablate", "mi-map", "grad-check")


class MissingArtifact(FileNotFoundError):
    pass


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    for key in KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="midz", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _add_config_options(p)
        return p

    command("gen-data", "generate a paired dataset file")
    command("train", "train both stages")
    command("train-shared", "train stage 1 only")
    p = command("train-exclusive", "train stage 2 from a stage-1 checkpoint")
    p.add_argument("--checkpoint", required=True)

    for name, help_text in (("probe", "probe classifiers on trained representations"),
                            ("retrieve", "nearest-neighbour retrieval"),
                            ("mi-map", "pixel-level MI agreement map")):
        p = command(name, help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="MIPD1 dataset file (default: regenerate from config)")
    sub.choices["probe"].add_argument("--probe-steps", type=int, default=ProbeConfig.steps)
    sub.choices["probe"].add_argument("--knn", type=int, nargs="*", default=[1, 5])
    r = sub.choices["retrieve"]
    r.add_argument("--query", type=int, default=0, help="dataset index of the query pair")
    r.add_argument("--k", type=int, default=10)
    r.add_argument("--kind", choices=("shared", "exclusive"), default="shared")
    r.add_argument("--domain", choices=("x", "y"), default="x")
    m = sub.choices["mi-map"]
    m.add_argument("--image", type=int, default=0)
    m.add_argument("--row", type=int, required=True)
    m.add_argument("--col", type=int, required=True)
    m.add_argument("--domain", choices=("x", "y"), default="x")

    p = command("sweep-lambda", "train stage 2 for several lambda_adv values")
    p.add_argument("--checkpoint", required=True, help="stage-1 checkpoint")
    p.add_argument("--lambdas", type=float, nargs="+", default=list(DEFAULT_LAMBDAS))
    p.add_argument("--probe-steps", type=int, default=ProbeConfig.steps)
    p = command("ablate", "ablation suite over objective terms")
    p.add_argument("--variants", nargs="+", default=list(ABLATION_VARIANTS), choices=list(ABLATION_VARIANTS))
    p.add_argument("--probe-steps", type=int, default=ProbeConfig.steps)
    p = sub.add_parser("grad-check", help="finite-difference check of every operator")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out-dir", default=None)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for key in KEYS:
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            overrides[key] = parse_value(key, raw)
    return apply_overrides(cfg, overrides)


def fresh_dir(out_dir, command: str) -> Path:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    n = 1
    while True:
        path = root / (command if n == 1 else f"{command}-{n}")
        try:
            path.mkdir()
            return path
        except FileExistsError:
            n += 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run_dir: Path, command: str, argv, cfg: RunConfig | None) -> None:
    artifacts = {p.name: _sha256(p) for p in sorted(run_dir.iterdir()) if p.is_file() and p.name != "manifest.json"}
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": None if cfg is None else cfg.to_text(),
        "config_hash": None if cfg is None else cfg.digest(),
        "seed": None if cfg is None else cfg.seed,
        "versions": {"midz": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "numba": numba.__version__},
        "artifacts": artifacts,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load(path):
    if not Path(path).exists():
        raise MissingArtifact(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _dataset(args, cfg: RunConfig):
    path = getattr(args, "data", None)
    if path:
        if not Path(path).exists():
            raise MissingArtifact(f"dataset not found: {path}")
        return read_dataset(path)
    return generate_dataset(cfg.dataset, cfg.n_pairs, cfg.seed)


def _progress(stream):
    def report(step: int, row: dict) -> None:
        if step % 100 == 0:
            print(f"step {step}: objective {row['objective']:.4f}", file=stream, flush=True)
    return report


def run_command(args, argv, out=None) -> int:
    out = out if out is not None else sys.stdout
    cmd = args.command
    if cmd == "grad-check":
        results = run_gradcheck(seeds=range(args.seeds))
        failed = [r for r in results if not r.passed]
        worst: dict[str, float] = {}
        for r in results:
            worst[r.op] = max(worst.get(r.op, 0.0), r.rel_error)
        for op, err in worst.items():
            print(f"{op:<16} max rel error {err:.2e}  {'ok' if err < TOLERANCE else 'FAIL'}", file=out)
        if args.out_dir:
            run_dir = fresh_dir(args.out_dir, cmd)
            (run_dir / "gradcheck.json").write_text(json.dumps(worst, indent=2, sort_keys=True) + "\n")
            write_manifest(run_dir, cmd, argv, None)
        return EXIT_NUMERIC if failed else EXIT_OK

    cfg = resolve_config(args)
    for_checkpoint = getattr(args, "checkpoint", None)
    bundle = _load(for_checkpoint) if for_checkpoint else None
    data = _dataset(args, cfg) if cmd != "gen-data" else None
    run_dir = fresh_dir(cfg.out_dir, cmd)
    tcfg = cfg.train_config()

    if cmd == "gen-data":
        write_dataset(run_dir / "data.mipd", generate_dataset(cfg.dataset, cfg.n_pairs, cfg.seed))
    elif cmd in ("train", "train-shared"):
        bundle = train_shared(data, tcfg, log_path=run_dir / "train_log.csv", checkpoint_dir=run_dir,
                              progress=_progress(out))
        save_checkpoint(bundle, run_dir / "stage1.midz")
        if cmd == "train":
            bundle = train_exclusive(data, tcfg, bundle, log_path=run_dir / "train_log.csv",
                                     checkpoint_dir=run_dir, progress=_progress(out))
            save_checkpoint(bundle, run_dir / "stage2.midz")
    elif cmd == "train-exclusive":
        bundle = train_exclusive(data, tcfg, bundle, log_path=run_dir / "train_log.csv", checkpoint_dir=run_dir,
                                 progress=_progress(out))
        save_checkpoint(bundle, run_dir / "stage2.midz")
    elif cmd == "probe":
        report = evaluate(bundle, data, ProbeConfig(steps=args.probe_steps, seed=cfg.seed),
                          knn_neighbors=tuple(args.knn))
        report.to_json(run_dir / "report.json")
        report.to_csv(run_dir / "report.csv")
        print(report.format_table(), file=out)
    elif cmd == "retrieve":
        images = data.images_x if args.domain == "x" else data.images_y
        labels = data.labels_x if args.domain == "x" else data.labels_y
        if not 0 <= args.query < len(images):
            raise ConfigError(f"query index {args.query} outside dataset of {len(images)} pairs")
        reps = compute_representations(bundle, images, args.kind, args.domain)
        top = retrieve(reps[args.query], reps, args.k)
        result = {"query": args.query, "indices": top.tolist(), "query_labels": labels[args.query].tolist(),
                  "labels": labels[top].tolist(), "factors": list(data.schema.names)}
        (run_dir / "retrieval.json").write_text(json.dumps(result, indent=2) + "\n")
        print(" ".join(map(str, top)), file=out)
    elif cmd == "mi-map":
        images = data.images_x if args.domain == "x" else data.images_y
        if not 0 <= args.image < len(images):
            raise ConfigError(f"image index {args.image} outside dataset of {len(images)} pairs")
        scores = mi_distance_map(bundle, images[args.image], (args.row, args.col), args.domain)
        np.savetxt(run_dir / "mi_map.csv", scores, delimiter=",", fmt="%.6f")
        print(f"wrote {run_dir / 'mi_map.csv'}", file=out)
    elif cmd == "sweep-lambda":
        rows = lambda_sweep(data, tcfg, bundle, args.lambdas, ProbeConfig(steps=args.probe_steps, seed=cfg.seed))
        write_sweep_csv(rows, run_dir / "sweep.csv")
        for r in rows:
            print(f"lambda={r['lambda']:<8g} {r['factor']:<14} {r['accuracy']:.4f}", file=out)
    elif cmd == "ablate":
        rows = ablation_suite(data, tcfg, args.variants, ProbeConfig(steps=args.probe_steps, seed=cfg.seed))
        (run_dir / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
        print(format_ablation(rows), file=out)
    write_manifest(run_dir, cmd, argv, cfg)
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return run_command(args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (CheckpointError, DatasetFormatError) as exc:
        print(f"unreadable artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingDiverged, NonFiniteError, NaNGradientError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
