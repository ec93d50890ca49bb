"""Command line: ``emergence train CONFIG`` and ``emergence analyze``.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .nn import DimensionError
from .training import (
    LOG_COLUMNS,
    LogRow,
    NumericError,
    build_agents,
    build_world,
    eval_split_for,
    evaluate_greedy,
    make_streams,
    stream_rng,
    train_loop,
)
from .world import ConfigurationError

log = logging.getLogger("emergence")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else f"{v:.6g}"


class MetricsLog:
    """CSV metrics log with a fixed column order; header written once."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(LOG_COLUMNS)
        self._last_step = None

    def write_row(self, row: LogRow) -> None:
        if self._last_step is not None and row.step <= self._last_step:
            raise ValueError(f"log rows must have increasing steps ({row.step} after {self._last_step})")
        self._writer.writerow([_fmt(v) for v in row.values()])
        self._fh.flush()
        self._last_step = row.step

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_log_row(metrics_log: MetricsLog, row: LogRow) -> None:
    metrics_log.write_row(row)


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]


def cmd_train(config_path, output_dir=None) -> int:
    cfg = load_config(config_path)
    if output_dir is not None:
        cfg.output_dir = str(output_dir)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    with MetricsLog(out / "metrics.csv") as mlog:
        result = train_loop(cfg, on_eval=mlog.write_row)
    digest = cfg.digest()
    save_checkpoint(out / "best.ckpt.json", result.best_state, result.best_step, digest)
    save_checkpoint(out / "final.ckpt.json", result.final_state, result.final_step, digest)
    last = result.rows[-1] if result.rows else None
    summary = f"stopped ({result.stop_reason}) at step {result.final_step}"
    if last is not None:
        summary += f"; val accuracy {last.val_accuracy:.4f}, best step {result.best_step}"
    log.info(summary)
    return EXIT_OK


def restore_agents(cfg: RunConfig, state: dict):
    """Build agents for cfg and load a checkpoint state into them."""
    sender, receiver = build_agents(cfg, stream_rng(make_streams(cfg.seed), "init"))
    for agent, module in (("sender", sender), ("receiver", receiver)):
        if agent not in state:
            raise CheckpointError(f"checkpoint has no {agent} parameters")
        module.load_state_dict(state[agent])
    return sender, receiver


def analyze(cfg: RunConfig, state: dict) -> tuple[dict, analysis.LanguageTable]:
    streams = make_streams(cfg.seed)
    world = build_world(cfg, stream_rng(streams, "data"))
    sender, receiver = restore_agents(cfg, state)
    n_cand, episodes = cfg.game.N, cfg.training.eval_episodes

    accuracy = {}
    for name in ("train", "val", "test"):
        split = world.split(name)
        if len(split) >= n_cand:
            ev = evaluate_greedy(sender, receiver, split, n_cand, stream_rng(streams, "eval"), episodes)
            accuracy[name] = ev.accuracy
        else:
            accuracy[name] = None
    monitored = evaluate_greedy(sender, receiver, eval_split_for(world, n_cand), n_cand,
                                stream_rng(streams, "eval"), episodes)

    table = analysis.dump_language(sender, world.dataset)
    topsim_note = None
    try:
        topsim = analysis.topographic_similarity(table)
    except analysis.UndefinedCorrelation as exc:
        topsim, topsim_note = None, str(exc)
    metrics = {
        "accuracy": accuracy,
        "val_accuracy": monitored.accuracy,
        "val_xent": monitored.xent,
        "topographic_similarity": topsim,
        "topographic_similarity_note": topsim_note,
        "length": analysis.length_stats(table, cfg.game.L),
        **analysis.uniqueness_and_entropy(table),
    }
    return metrics, table


def cmd_analyze(checkpoint_path, config_path, output_dir=None) -> int:
    cfg = load_config(config_path)
    state, meta = load_checkpoint(checkpoint_path)
    if meta.get("config_hash") not in (None, cfg.digest()):
        log.warning("checkpoint was written under a different config (hash %s, config %s)",
                    meta.get("config_hash"), cfg.digest())
    metrics, table = analyze(cfg, state)
    metrics["checkpoint_step"] = meta.get("step")
    out = Path(output_dir) if output_dir is not None else Path(checkpoint_path).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(checkpoint_path).name.split(".")[0]
    (out / f"{stem}.metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    analysis.write_language_dump(table, out / f"{stem}.language.jsonl")
    log.info("accuracy %s, topsim %s", metrics["accuracy"], metrics["topographic_similarity"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emergence", description="Lewis discrimination game simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a sender/receiver pair")
    p.add_argument("config", help="YAML run configuration")
    p.add_argument("--output-dir", help="override output_dir from the config")

    p = sub.add_parser("analyze", help="evaluate a checkpoint and dump its language")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="where to write metrics and the language dump")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(logging.INFO)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.output_dir)
        return cmd_analyze(args.checkpoint, args.config, args.output_dir)
    except (ConfigurationError, CheckpointError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
