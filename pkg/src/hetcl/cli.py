"""Command line: ``hetcl generate | run | report``.

Experiment configs are flat ``key = value`` files (``#`` starts a comment).
``hetcl run --list-keys`` prints every key with its default.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .distill import DistillConfig
from .meta import MetaConfig
from .metrics import MetricReport, emit_report, forgetting_aware_gap, read_matrix, write_matrix
from .model import save_checkpoint
from .replay import dump_buffers
from .taskstream import (BENCHMARK_STREAM, SyntheticConfig, generate_synthetic, load_dataset,
                         partition_by_classes, save_dataset)
from .trainer import STRATEGIES, BufferConfig, TrainConfig, run_sequence


class ConfigError(ValueError):
    pass


# key -> (default, help)
_TOP_KEYS = {
    "dataset": ("", "dataset directory; empty means generate a synthetic graph per seed"),
    "strategies": ("hero,finetune", f"comma list from {','.join(STRATEGIES)}"),
    "seeds": ("0,1,2,3,4", "comma list of root seeds, one run per seed and strategy"),
    "out": ("runs", "output directory for run artifacts"),
    "classes_per_task": (2, "classes per task"),
    "train_fraction": (0.6, "per-class share of labeled nodes used for training"),
    "shuffle_classes": (False, "assign classes to tasks in seeded random order"),
    "jobs": (1, "parallel worker processes for independent (strategy, seed) cells"),
}
_SECTION_HELP = {
    "synthetic": "synthetic graph generator ('synthetic.seed = -1' reuses the run seed)",
    "train": "outer training loop",
    "meta": "fast-adaptation inner step",
    "distill": "teacher distillation",
    "buffer": "replay buffers ('buffer.target_capacity = none' means no global cap)",
}
_SECTIONS = {
    "synthetic": SyntheticConfig,
    "train": TrainConfig,
    "meta": MetaConfig,
    "distill": DistillConfig,
    "buffer": BufferConfig,
}
_SKIP = {("train", "strategy"), ("train", "seed"), ("train", "distill"),
         ("train", "meta"), ("train", "buffer")}


def default_config() -> dict:
    cfg = {k: v for k, (v, _) in _TOP_KEYS.items()}
    for sec, cls in _SECTIONS.items():
        inst = cls()
        for f in dataclasses.fields(cls):
            if (sec, f.name) in _SKIP:
                continue
            cfg[f"{sec}.{f.name}"] = getattr(inst, f.name)
    cfg["synthetic.seed"] = -1
    for k, v in BENCHMARK_STREAM.items():
        cfg[f"synthetic.{k}"] = v
    return cfg


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if key == "buffer.target_capacity":
            return None if raw.lower() in ("", "none") else int(raw)
        if key == "buffer.d_thresh":
            return "auto" if raw.lower() == "auto" else float(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            conv = type(default[0]) if default else str
            return tuple(conv(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from None


def parse_config(text: str) -> dict:
    cfg = default_config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in cfg:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        cfg[key] = _coerce(key, raw, cfg[key])
    return cfg


def _fmt_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def echo_config(cfg: dict) -> str:
    return "".join(f"{k} = {_fmt_value(cfg[k])}\n" for k in sorted(cfg))


def _section(cfg: dict, sec: str) -> dict:
    pre = sec + "."
    return {k[len(pre):]: v for k, v in cfg.items() if k.startswith(pre)}


def train_config(cfg: dict, strategy: str, seed: int) -> TrainConfig:
    return TrainConfig(strategy=strategy, seed=seed,
                       distill=DistillConfig(**_section(cfg, "distill")),
                       meta=MetaConfig(**_section(cfg, "meta")),
                       buffer=BufferConfig(**_section(cfg, "buffer")),
                       **_section(cfg, "train"))


def synthetic_config(cfg: dict, seed: int) -> SyntheticConfig:
    syn = _section(cfg, "synthetic")
    if syn["seed"] < 0:
        syn["seed"] = seed
    return SyntheticConfig(**syn)


def dataset_identity(cfg: dict) -> str:
    if cfg["dataset"]:
        return f"dir:{Path(cfg['dataset']).resolve()}"
    syn = {k: _fmt_value(v) for k, v in _section(cfg, "synthetic").items()}
    digest = hashlib.sha256(json.dumps(syn, sort_keys=True).encode()).hexdigest()[:12]
    return f"synthetic:{digest}"


def validate(cfg: dict) -> list:
    """Check everything that can fail before training starts; return the cells."""
    if cfg["dataset"] and not Path(cfg["dataset"]).is_dir():
        raise ConfigError(f"dataset directory '{cfg['dataset']}' does not exist")
    strategies = [s.strip() for s in str(cfg["strategies"]).split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy '{s}'")
    try:
        seeds = [int(s) for s in str(cfg["seeds"]).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seeds list {cfg['seeds']!r}") from None
    if not strategies or not seeds:
        raise ConfigError("need at least one strategy and one seed")
    try:
        for s in strategies:
            train_config(cfg, s, seeds[0])
        if not cfg["dataset"]:
            synthetic_config(cfg, seeds[0])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return [(s, seed) for s in strategies for seed in seeds]


def run_cell(cfg: dict, strategy: str, seed: int) -> Path:
    """Run one (strategy, seed) and write its artifact directory."""
    if cfg["dataset"]:
        graph = load_dataset(cfg["dataset"])
    else:
        graph = generate_synthetic(synthetic_config(cfg, seed))
    stream = partition_by_classes(graph, cfg["classes_per_task"], cfg["train_fraction"],
                                  seed, cfg["shuffle_classes"])
    result = run_sequence(stream, train_config(cfg, strategy, seed))

    out = Path(cfg["out"]) / f"{strategy}_seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    echo = dict(cfg, strategies=strategy, seeds=str(seed))
    (out / "config.echo").write_text(
        f"# hetcl {__version__}\n# dataset_id = {dataset_identity(cfg)}\n" + echo_config(echo),
        encoding="utf-8")
    write_matrix(result.matrix, out / "matrix.csv")
    with open(out / "losses.csv", "w", newline="", encoding="utf-8") as fh:
        cols = ["task_index", "epoch", "L_task", "L_er", "L_logit", "L_sem", "L_joint"]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in result.losses:
            w.writerow([row[c] if c in ("task_index", "epoch") else repr(float(row[c]))
                        for c in cols])
    dump_buffers(result.memory, graph, out / "buffers.csv")
    save_checkpoint(result.params, out / "checkpoint_final")
    return out


def _run_cell_args(args):
    return run_cell(*args)


def cmd_run(config_path, jobs: int | None = None) -> list:
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file '{path}' not found")
    cfg = parse_config(path.read_text(encoding="utf-8"))
    cells = validate(cfg)
    jobs = cfg["jobs"] if jobs is None else jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_cell_args, [(cfg, s, seed) for s, seed in cells]))
    return [run_cell(cfg, s, seed) for s, seed in cells]


def cmd_generate(syn: SyntheticConfig, out_dir) -> Path:
    return save_dataset(generate_synthetic(syn), out_dir)


def _read_echo(path: Path) -> dict:
    info = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.lstrip("# ").strip()
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            info[k] = v
    return info


def _expand_run_dirs(dirs) -> list:
    found = []
    for d in map(Path, dirs):
        if (d / "matrix.csv").exists():
            found.append(d)
        elif d.is_dir():
            found.extend(sorted(p.parent for p in d.glob("*/matrix.csv")))
        else:
            raise ConfigError(f"run directory '{d}' not found")
    if not found:
        raise ConfigError("no run directories with matrix.csv found")
    return found


def cmd_report(run_dirs, out_dir, percent: bool = False, notices=None) -> list:
    """Aggregate run directories; FaG pairs each run with finetune on the same seed."""
    notices = notices if notices is not None else []
    runs = []
    for d in _expand_run_dirs(run_dirs):
        info = _read_echo(d / "config.echo")
        runs.append(MetricReport.from_matrix(read_matrix(d / "matrix.csv"),
                                             info["strategies"], int(info["seeds"]),
                                             info.get("dataset_id", "")))
    datasets = {r.dataset for r in runs}
    if len(datasets) > 1:
        raise ConfigError(f"runs come from different datasets: {sorted(datasets)}")
    reference = {r.seed: r for r in runs if r.strategy == "finetune"}
    if reference:
        for r in runs:
            if r.seed in reference:
                r.fag = forgetting_aware_gap(reference[r.seed].final_task_accuracy,
                                             r.final_task_accuracy)
    else:
        notices.append("no finetune runs: FaG column omitted")
    return emit_report(runs, out_dir, percent=percent)


# ------------------------------------------------------------------ argparse

def _synthetic_flags(p: argparse.ArgumentParser):
    for f in dataclasses.fields(SyntheticConfig):
        default = f.default
        flag = "--" + f.name.replace("_", "-")
        if isinstance(default, tuple):
            p.add_argument(flag, default=",".join(map(str, default)),
                           help=f"comma list (default {','.join(map(str, default))})")
        else:
            p.add_argument(flag, type=type(default), default=default,
                           help=f"default {default}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetcl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hetcl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset directory")
    g.add_argument("--out", required=True, help="output dataset directory")
    _synthetic_flags(g)

    r = sub.add_parser("run", help="run strategies x seeds from a config file")
    r.add_argument("config", nargs="?", help="key = value config file")
    r.add_argument("--jobs", type=int, default=None, help="override the 'jobs' key")
    r.add_argument("--list-keys", action="store_true", help="print config keys and defaults")

    rep = sub.add_parser("report", help="aggregate run directories")
    rep.add_argument("runs", nargs="+", help="run directories (or parents of them)")
    rep.add_argument("--out", required=True, help="report output directory")
    rep.add_argument("--percent", action="store_true", help="write metrics as percentages")
    return p


def _list_keys() -> str:
    lines = []
    for k, (v, h) in _TOP_KEYS.items():
        lines.append(f"{k} = {_fmt_value(v)}    # {h}")
    defaults = default_config()
    for sec, h in _SECTION_HELP.items():
        lines.append(f"# [{sec}] {h}")
        lines += [f"{k} = {_fmt_value(defaults[k])}" for k in sorted(defaults)
                  if k.startswith(sec + ".")]
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            kw = {f.name: getattr(args, f.name) for f in dataclasses.fields(SyntheticConfig)}
            out = cmd_generate(SyntheticConfig(**kw), args.out)
            print(f"wrote {out}")
        elif args.command == "run":
            if args.list_keys:
                sys.stdout.write(_list_keys())
                return 0
            if not args.config:
                raise ConfigError("run needs a config file")
            for d in cmd_run(args.config, args.jobs):
                print(f"wrote {d}")
        elif args.command == "report":
            notices = []
            files = cmd_report(args.runs, args.out, args.percent, notices)
            for n in notices:
                print(f"notice: {n}", file=sys.stderr)
            print(f"wrote {len(files)} files to {args.out}")
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
