"""``graphmae`` command line: pretrain, probe, graph-eval, ablate, gradcheck.

Exit codes: 0 success, 1 gradient check failure, 2 usage/config/data error,
3 numeric failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import KEYS, ConfigError, ConfigFile, load_config
from .errors import ArchitectureMismatchError, FormatError, NonFiniteError, ValidationError
from .evaluation import EvalReport, embed, kfold_graph_eval, linear_probe
from .graph import (
    Graph,
    GraphSet,
    atomic_write_bytes,
    generate_sbm,
    generate_sbm_graphset,
    load_graph,
    load_graphset,
    row_normalize_features,
    split_nodes,
)
from .gradcheck import results_csv, run_checks
from .training import GraphMAE, RunConfig, pretrain

log = logging.getLogger("graphmae")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT_FILE = "checkpoint.bin"
ARCHITECTURE_FILE = "architecture.json"
TRAIN_LOG_FILE = "train_log.csv"

# ablation axis -> config key
AXES = {
    "mask_ratio": "mask_ratio",
    "gamma": "gamma",
    "criterion": "criterion",
    "decoder_kind": "decoder.kind",
    "remask_on_off": "remask",
}


class UsageError(ValidationError):
    pass


def _write_text(path: Path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# ----------------------------------------------------------------- data


def load_data(cfg: ConfigFile) -> Union[Graph, GraphSet]:
    if cfg.task == "graph":
        if cfg.get("data.graphset"):
            return load_graphset(cfg.path("data.graphset"))
        if cfg.get("data.synthetic") == "sbm":
            return generate_sbm_graphset(cfg.get("sbm.graphs", 40), cfg.get("sbm.nodes", 12),
                                         cfg.get("sbm.p_in", 0.5), cfg.get("sbm.p_out", 0.05),
                                         cfg.feature_spec(), seed=cfg.get("sbm.seed", 0))
        raise ConfigError("graph task needs data.graphset or data.synthetic = sbm")

    if cfg.get("data.edges") or cfg.get("data.features"):
        if not (cfg.get("data.edges") and cfg.get("data.features")):
            raise ConfigError("data.edges and data.features must be given together")
        g = load_graph(cfg.path("data.edges"), cfg.path("data.features"), cfg.path("data.labels"))
    elif cfg.get("data.synthetic") == "sbm":
        g = generate_sbm(cfg.get("sbm.blocks", [100, 100]), cfg.get("sbm.p_in", 0.15),
                         cfg.get("sbm.p_out", 0.01), cfg.feature_spec(), seed=cfg.get("sbm.seed", 0))
    else:
        raise ConfigError("node task needs data.edges + data.features or data.synthetic = sbm")
    return row_normalize_features(g) if cfg.normalize_features() else g


def node_split(cfg: ConfigFile, g: Graph, seed: int):
    if g.labels is None:
        raise ConfigError("probing needs node labels (data.labels)")
    fractions = (cfg.get("split.train", 0.5), cfg.get("split.val", 0.2), cfg.get("split.test", 0.3))
    return split_nodes(g, fractions, seed=cfg.get("split.seed", seed),
                       train_per_class=cfg.get("split.train_per_class"))


def _resolve_checkpoint(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_FILE
    if not path.is_file():
        raise UsageError(f"checkpoint {path} does not exist")
    arch = path.with_name(ARCHITECTURE_FILE)
    if not arch.is_file():
        raise UsageError(f"architecture file {arch} not found beside the checkpoint")
    return path, arch


def load_matching_model(cfg: ConfigFile, run: RunConfig, data, checkpoint) -> GraphMAE:
    ckpt, arch_path = _resolve_checkpoint(checkpoint)
    arch = json.loads(arch_path.read_text(encoding="utf-8"))
    expected = GraphMAE.init(data.num_features, run).architecture()
    if arch != expected:
        raise ArchitectureMismatchError(
            f"checkpoint architecture in {arch_path} does not match the config "
            f"(encoder {run.encoder_kind}, decoder {run.decoder_kind}, hidden {run.hidden_size}, "
            f"features {data.num_features})"
        )
    return load_checkpoint(ckpt, arch)


def _run_summary(run: RunConfig) -> dict:
    return {
        "mask_ratio": run.mask.mask_ratio,
        "replace_rate": run.mask.replace_rate,
        "criterion": run.loss.criterion,
        "gamma": run.loss.gamma,
        "encoder": run.encoder_kind,
        "decoder": run.decoder_kind,
        "hidden_size": run.hidden_size,
        "remask": run.uses_remask,
        "max_epoch": run.optim.max_epoch,
        "seed": run.seed,
    }


def evaluate(cfg: ConfigFile, run: RunConfig, data, model: GraphMAE) -> EvalReport:
    probe = cfg.probe_config()
    if isinstance(data, GraphSet):
        report = kfold_graph_eval(data, model.encoder, cfg.get("pooling", "mean"), cfg.get("folds", 10),
                                  cfg.get("eval.repeats", 5), probe, seed=run.seed)
    else:
        report = linear_probe(embed(model.encoder, data), data.labels, node_split(cfg, data, run.seed),
                              probe, seed=run.seed)
    report.config["run"] = _run_summary(run)
    return report


# ------------------------------------------------------------- commands


def cmd_pretrain(config, out, seed: Optional[int] = None) -> int:
    cfg = load_config(config)
    run = cfg.run_config(seed)
    data = load_data(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result = pretrain(data, run)
    save_checkpoint(result.model, out / CHECKPOINT_FILE, out / ARCHITECTURE_FILE)
    _write_text(out / TRAIN_LOG_FILE, result.log.to_csv())
    log.info("final loss %.6f; wrote %s", result.log.losses[-1] if len(result.log) else float("nan"), out)
    return EXIT_OK


def _cmd_eval(config, checkpoint, out, seed, task) -> int:
    cfg = load_config(config)
    if cfg.task != task:
        raise ConfigError(f"config task is {cfg.task!r}; this command needs task = {task}")
    run = cfg.run_config(seed)
    data = load_data(cfg)
    model = load_matching_model(cfg, run, data, checkpoint)
    report = evaluate(cfg, run, data, model)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    name = "probe_report.json" if task == "node" else "graph_eval_report.json"
    _write_text(out / name, report.to_json())
    print(f"{report.task}: {100 * report.mean:.2f} +- {100 * report.std:.2f}")
    return EXIT_OK


def cmd_probe(config, checkpoint, out, seed=None) -> int:
    return _cmd_eval(config, checkpoint, out, seed, "node")


def cmd_graph_eval(config, checkpoint, out, seed=None) -> int:
    return _cmd_eval(config, checkpoint, out, seed, "graph")


def parse_axis_values(axis: str, values) -> list[tuple[str, object]]:
    if axis not in AXES:
        raise UsageError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    if isinstance(values, str):
        values = [v for v in values.split(",")]
    tokens = [v.strip() for v in values if v.strip()]
    if not tokens:
        raise UsageError("--values is empty")
    parser = KEYS[AXES[axis]]
    parsed = []
    for tok in tokens:
        try:
            parsed.append((tok, parser(tok)))
        except ValueError as exc:
            raise UsageError(f"invalid value {tok!r} for axis {axis}: {exc}") from None
    return parsed


def _sweep_point(cfg: ConfigFile, key, token, value, seed, out: Path):
    variant = cfg.with_value(key, value)
    run = variant.run_config(seed)
    data = load_data(variant)
    result = pretrain(data, run)
    report = evaluate(variant, run, data, result.model)
    run_dir = out / "runs" / f"{key}={token}"
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_text(run_dir / TRAIN_LOG_FILE, result.log.to_csv())
    _write_text(run_dir / "report.json", report.to_json())
    return report


def gnuplot_script(axis: str, csv_name: str) -> str:
    return (
        "set datafile separator ','\n"
        f"set xlabel '{axis}'\n"
        "set ylabel 'accuracy'\n"
        "set key off\n"
        f"plot '{csv_name}' every ::1 using 0:2:3:xtic(1) with yerrorlines\n"
    )


def thread_cap(default: int) -> int:
    raw = os.environ.get("GRAPHMAE_THREADS")
    if raw is None:
        return default
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"GRAPHMAE_THREADS must be a positive integer, got {raw!r}") from None
    if cap < 1:
        raise UsageError(f"GRAPHMAE_THREADS must be a positive integer, got {raw!r}")
    return cap


def cmd_ablate(config, axis, values, out, seed=None, emit_gnuplot=False) -> int:
    points = parse_axis_values(axis, values)
    cfg = load_config(config)
    key = AXES[axis]
    for _, value in points:  # fail fast before any training
        cfg.with_value(key, value).run_config(seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    workers = min(len(points), thread_cap(os.cpu_count() or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_sweep_point, cfg, key, tok, val, seed, out) for tok, val in points]
        reports = [f.result() for f in futures]
    lines = ["axis_value,mean,std"]
    for (tok, _), rep in zip(points, reports):
        lines.append(f"{tok},{rep.mean!r},{rep.std!r}")
    csv_name = f"ablation_{axis}.csv"
    _write_text(out / csv_name, "\n".join(lines) + "\n")
    if emit_gnuplot:
        _write_text(out / f"ablation_{axis}.gp", gnuplot_script(axis, csv_name))
    print("\n".join(lines))
    return EXIT_OK


def cmd_gradcheck(out, seed=0, corrupt_backward=None) -> int:
    results = run_checks(seed=seed or 0, corrupt=corrupt_backward)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "gradcheck.csv", results_csv(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    for r in failed:
        print(f"FAILED {r.name} ({r.kind}): max relative error {r.max_rel_error:.3e} >= {r.threshold:.0e}")
    return EXIT_CHECK if failed else EXIT_OK


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graphmae", description="Masked graph autoencoder pretraining and evaluation.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for per-epoch debug logs")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, type=Path, help="key = value config file")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")

    p = sub.add_parser("pretrain", help="self-supervised pretraining; writes checkpoint, architecture, train log")
    common(p)
    for name, help_ in (("probe", "linear probe on frozen node embeddings"),
                        ("graph-eval", "pooled embeddings + stratified k-fold probe")):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--checkpoint", required=True, type=Path, help="checkpoint file or pretrain output dir")
    p = sub.add_parser("ablate", help="pretrain + evaluate once per value of one axis")
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--emit-gnuplot", action="store_true", help="also write a gnuplot script for the CSV")
    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    common(p, config=False)
    p.add_argument("--corrupt-backward", default=None, help=argparse.SUPPRESS)
    return ap


def dispatch(args) -> int:
    if args.command == "pretrain":
        return cmd_pretrain(args.config, args.out, args.seed)
    if args.command == "probe":
        return cmd_probe(args.config, args.checkpoint, args.out, args.seed)
    if args.command == "graph-eval":
        return cmd_graph_eval(args.config, args.checkpoint, args.out, args.seed)
    if args.command == "ablate":
        return cmd_ablate(args.config, args.axis, args.values, args.out, args.seed, args.emit_gnuplot)
    return cmd_gradcheck(args.out, args.seed, args.corrupt_backward)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except NonFiniteError as exc:
        print(f"graphmae: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, FormatError, ArchitectureMismatchError, OSError, json.JSONDecodeError) as exc:
        print(f"graphmae: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
