"""``hrm`` command line: gen | train | eval | arc-eval | analyze | sweep.

Exit codes: 0 success, 1 input error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path
from typing import Any

import numpy as np
import torch

from . import analysis
from .act import NumericalError, Trainer, evaluate, predict_segments
from .checkpoint import build_model, load_checkpoint, restore, save_checkpoint
from .config import ConfigError, ModelConfig
from .data import arc as arc_mod
from .data.datasets import (
    atomic_write, augment_sudoku, arc_examples, build_split, generate_mazes, generate_sudoku,
    provenance_for, read_jsonl, sudoku_split, tokenize_all, write_jsonl,
)
from .data.maze import MazeInstance, maze_bfs, maze_check, order_path_cells
from .data.sudoku import GenerationError
from .data.tokens import TokenDataset, arc_decode, arc_tokens, maze_decode

logger = logging.getLogger("hrm")

RUN_KEYS = {"steps", "checkpoint_every", "variant", "depth", "loops", "use_act", "M_max_eval",
            "band", "augment", "test_ratio", "n_augment", "count", "task"}
MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}


class InputError(ValueError):
    pass


# ---------------------------------------------------------------- config

def load_run_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise InputError("config file must hold a JSON object")
    unknown = set(data) - RUN_KEYS - MODEL_KEYS
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    return data


def pick(args, cfg: dict, key: str, default=None):
    """CLI flag > config file > default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    return cfg.get(key, default)


def model_config(run: dict, provenance: dict, seed: int | None) -> ModelConfig:
    fields = {k: v for k, v in run.items() if k in MODEL_KEYS}
    if provenance:
        fields["vocab_size"] = int(provenance["vocab_size"])
        fields["seq_len"] = int(provenance["seq_len"])
        fields.setdefault("meta", {})
        fields["meta"] = {**fields["meta"], "task": provenance.get("task")}
    if seed is not None:
        fields["seed"] = seed
    return ModelConfig(**fields)


def load_dataset(path) -> tuple[dict, TokenDataset]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"dataset not found: {path}")
    prov, examples = read_jsonl(path)
    seq = int(prov["seq_len"]) if "seq_len" in prov else None
    return prov, TokenDataset.from_examples(examples, seq)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    run = load_run_config(args.config)
    task = args.task
    count = int(pick(args, run, "count", 0) if args.count is None else args.count)
    seed = int(args.seed if args.seed is not None else run.get("seed", 0))
    ratio = float(pick(args, run, "test_ratio", 0.0))
    out = Path(args.out)
    if count < 0:
        raise InputError("count must be >= 0")
    extra: dict[str, Any] = {}
    if task == "sudoku":
        band = tuple(pick(args, run, "band", (0, 10**9)))
        instances = generate_sudoku(count, seed, band=band)
        extra["band"] = list(band)
    elif task == "maze":
        instances = generate_mazes(count, seed)
        extra["min_difficulty"] = 110
    elif task == "arc":
        if not args.arc_dir:
            raise InputError("--arc-dir is required for task arc")
        instances, id_map = arc_examples(args.arc_dir, int(pick(args, run, "n_augment", 0)), seed)
        extra.update(n_puzzles=len(id_map), puzzle_ids=id_map)
        count = len(instances)
    else:  # argparse restricts choices
        raise InputError(f"unknown task {task}")

    augment = int(pick(args, run, "augment", 0))
    if ratio > 0:
        if task == "sudoku":
            split = sudoku_split(instances, 1 - ratio, seed)
        else:
            split = build_split(instances, list(range(len(instances))), 1 - ratio, seed)
        train = split.train
        if task == "sudoku" and augment:
            train = augment_sudoku(train, augment, seed)
        prov = provenance_for(task, count, seed, split=split.provenance, augment=augment, **extra)
        write_jsonl(out / "train.jsonl", tokenize_all(train), {**prov, "part": "train"})
        write_jsonl(out / "test.jsonl", tokenize_all(split.test), {**prov, "part": "test"})
        logger.info("wrote %d train / %d test examples to %s", len(train), len(split.test), out)
    else:
        if task == "sudoku" and augment:
            instances = augment_sudoku(instances, augment, seed)
        prov = provenance_for(task, count, seed, augment=augment, **extra)
        write_jsonl(out / "dataset.jsonl", tokenize_all(instances), prov)
        logger.info("wrote %d examples to %s", len(instances), out / "dataset.jsonl")
    return 0


# ---------------------------------------------------------------- train

def _metrics_lines(path: Path, upto: int) -> list[str]:
    if not path.exists():
        return []
    keep = []
    for line in path.read_text().splitlines():
        if line.strip() and json.loads(line)["step"] <= upto:
            keep.append(line)
    return keep


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    prov, data = load_dataset(args.data)
    if len(data) == 0:
        raise InputError("training set is empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = int(pick(args, run, "steps", 1000))
    every = int(pick(args, run, "checkpoint_every", 0) or 0)
    ckpt_path = out / "checkpoint.pt"
    metrics_path = out / "metrics.jsonl"

    if args.resume:
        payload = load_checkpoint(args.resume)
        config, net, trainer = restore(payload, data)
        lines = _metrics_lines(metrics_path, trainer.step_count)
    else:
        config = model_config(run, prov, args.seed)
        variant = pick(args, run, "variant", "hrm")
        net = build_model(config, variant, pick(args, run, "depth", None), int(pick(args, run, "loops", 1)))
        use_act = bool(pick(args, run, "use_act", variant == "hrm"))
        if not use_act:
            config = config.replace(epsilon_explore=0.0)
        trainer = Trainer(net, data, config, use_act=use_act)
        lines = []
    extra = {"data_provenance": prov}

    try:
        while trainer.step_count < steps:
            m = trainer.step()
            lines.append(json.dumps(m, sort_keys=True))
            if every and trainer.step_count % every == 0:
                save_checkpoint(ckpt_path, trainer, extra)
                atomic_write(metrics_path, "\n".join(lines) + "\n")
    except NumericalError as exc:
        atomic_write(metrics_path, "\n".join(lines) + ("\n" if lines else ""))
        logger.error("numerical abort: %s (last good checkpoint kept at %s)", exc, ckpt_path)
        return 2
    save_checkpoint(ckpt_path, trainer, extra)
    atomic_write(metrics_path, "\n".join(lines) + ("\n" if lines else ""))
    last = json.loads(lines[-1]) if lines else {}
    atomic_write(out / "summary.json", _json({"steps": trainer.step_count, "last": last,
                                              "config": config.to_dict()}))
    return 0


# ---------------------------------------------------------------- eval

def maze_outcome(input_tokens, pred_tokens) -> str:
    src = maze_decode(input_tokens)
    pred = maze_decode(pred_tokens)
    walls, start, goal = src["walls"], src["start"], src["goal"]
    optimal = maze_bfs(walls, start, goal)
    if optimal is None:
        return "invalid"
    inst = MazeInstance(walls, start, goal, tuple(optimal))
    cells = pred["path_cells"] | {start, goal}
    walk = order_path_cells(cells, start, goal)
    return "invalid" if walk is None else maze_check(walk, inst)


def eval_report(net, prov: dict, data: TokenDataset, M_max_eval: int) -> dict[str, Any]:
    ev = evaluate(net, data, M_max_eval)
    report: dict[str, Any] = {k: ev[k] for k in ("exact_match", "token_accuracy", "mean_segments", "n")}
    report["M_max_eval"] = M_max_eval
    task = prov.get("task")
    if task == "sudoku" and data.examples:
        groups: dict[str, list[bool]] = defaultdict(list)
        for ex, ok in zip(data.examples, ev["correct"].tolist()):
            groups[str(int(ex.difficulty or 0))].append(ok)
        report["by_difficulty"] = {k: {"n": len(v), "exact_match": sum(v) / len(v)}
                                   for k, v in sorted(groups.items(), key=lambda kv: int(kv[0]))}
    if task == "maze":
        counts = {"correct": 0, "suboptimal": 0, "invalid": 0}
        for x, p in zip(data.inputs.tolist(), ev["predictions"].tolist()):
            counts[maze_outcome(x, p)] += 1
        report["maze"] = {"valid": counts["correct"] + counts["suboptimal"],
                          "optimal": counts["correct"], "invalid": counts["invalid"]}
    return report


def cmd_eval(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    config, net, _ = restore(payload)
    prov, data = load_dataset(args.data)
    M = int(args.M_max_eval or config.M_max)
    report = eval_report(net, prov, data, M)
    atomic_write(Path(args.out) / "eval.json", _json(report))
    return 0


# ---------------------------------------------------------------- arc-eval

def cmd_arc_eval(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    config, net, _ = restore(payload)
    id_map = payload.get("extra", {}).get("data_provenance", {}).get("puzzle_ids", {})
    tasks = arc_mod.load_arc_dir(args.arc_dir)
    rng = np.random.default_rng(args.seed or 0)
    n_aug = int(args.n_augment)
    results, scored, solved = {}, 0, 0
    for name, (_, tests) in tasks.items():
        pid = int(id_map.get(name, 0))
        if arc_tokens([[0]], pid)[0] >= config.vocab_size:
            pid = 0
        for ti, test in enumerate(tests):
            transforms = [arc_mod.ArcTransform()]
            while len(transforms) < n_aug:
                transforms.append(arc_mod.ArcTransform.random(rng))
            inputs, used = [], []
            for t in transforms[:max(n_aug, 1)]:
                try:
                    inputs.append(arc_tokens(arc_mod.transform_grid(test.input, t), pid))
                    used.append(t)
                except arc_mod.TransformError:
                    continue
            x = torch.tensor(inputs, dtype=torch.long)
            preds, _ = predict_segments(net, x, config.M_max)
            grids = []
            for t, p in zip(used, preds.tolist()):
                g = arc_decode(p)
                if g is not None:
                    grids.append(arc_mod.arc_invert(g, t))
            attempts = list(arc_mod.arc_vote(grids)) if grids else []
            entry: dict[str, Any] = {"attempts": [a.tolist() for a in attempts]}
            if test.output is not None:
                ok = any(a.shape == test.output.shape and (a == test.output).all() for a in attempts)
                entry["correct"] = bool(ok)
                scored += 1
                solved += int(ok)
            results[f"{name}/{ti}"] = entry
    report: dict[str, Any] = {"predictions": results, "n_augment": n_aug}
    if scored:
        report["pass@2"] = solved / scored
    atomic_write(Path(args.out) / "arc_predictions.json", _json(report))
    return 0


# ---------------------------------------------------------------- analyze

ANALYZE_MODES = ("pr", "residuals", "pca", "intermediate")


def cmd_analyze(args) -> int:
    if args.mode not in ANALYZE_MODES:
        raise InputError(f"unknown mode {args.mode!r}; choose from {ANALYZE_MODES}")
    payload = load_checkpoint(args.checkpoint)
    config, net, _ = restore(payload)
    prov, data = load_dataset(args.data)
    n = min(int(args.count), len(data))
    if n < 1:
        raise InputError("need at least one input")
    x = data.inputs[:n]
    segments = int(args.segments or (config.M_max if args.mode == "pr" else 1))
    records: list[dict] = []
    if args.mode == "pr":
        bundle = analysis.collect_trajectories(net, x, segments)
        counts = sorted({max(1, round(n * f / 10)) for f in range(1, 11)})
        for row in analysis.pr_scaling_curve(bundle, counts):
            records.append({"series": "pr_z_H", "x": row["tasks"], "y": row["pr_z_H"]})
            records.append({"series": "pr_z_L", "x": row["tasks"], "y": row["pr_z_L"]})
    elif args.mode == "residuals":
        res = analysis.residual_series(analysis.trace_segments(net, x, segments))
        for name in ("z_L", "z_H"):
            mean = np.atleast_2d(res[name]).mean(axis=0)
            records += analysis.plot_records(f"residual_{name}", range(1, len(mean) + 1), mean)
        records.append({"series": "spike_fraction", "x": 0, "y": analysis.spike_fraction(res)})
    elif args.mode == "pca":
        trace = analysis.trace_segments(net, x[:1], segments)
        for name, stack in (("z_L", trace.z_L()), ("z_H", trace.z_H())):
            states = stack[:, 0].flatten(1).double().numpy()
            k = min(3, states.shape[0] - 1)
            proj, _, _ = analysis.pca_project(states, k)
            records += analysis.plot_records(f"pca_{name}", range(len(proj)), proj)
    else:
        trace = analysis.trace_segments(net, x[:1], segments)
        task = prov.get("task")
        for entry in analysis.intermediate_predictions(net, trace, task):
            records.append({"series": "prediction", "x": entry["step"], "y": entry["tokens"][0].tolist()})
            if "violations" in entry:
                records.append({"series": "violations", "x": entry["step"], "y": entry["violations"][0]})
                records.append({"series": "changed", "x": entry["step"], "y": entry["changed"][0]})
    atomic_write(Path(args.out) / f"{args.mode}.jsonl", analysis.dumps_plot_data(records))
    return 0


# ---------------------------------------------------------------- sweep

def _int_list(text: str | None) -> list[int]:
    return [int(v) for v in text.split(",") if v] if text else []


def cmd_sweep(args) -> int:
    run = load_run_config(args.config)
    prov, train = load_dataset(args.data)
    _, test = load_dataset(args.test)
    config = model_config(run, prov, args.seed)
    steps = int(pick(args, run, "steps", 200))
    rows = analysis.depth_width_sweep(train, test, config, _int_list(args.depths),
                                      _int_list(args.widths), steps)
    atomic_write(Path(args.out) / "sweep.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hrm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    g = sub.add_parser("gen", help="generate a puzzle dataset")
    common(g)
    g.add_argument("--task", choices=("sudoku", "maze", "arc"), required=True)
    g.add_argument("--count", type=int)
    g.add_argument("--band", type=lambda s: [int(v) for v in s.split(",")],
                   help="sudoku backtrack band lo,hi")
    g.add_argument("--augment", type=int, help="augmented copies per sudoku train puzzle")
    g.add_argument("--test-ratio", dest="test_ratio", type=float)
    g.add_argument("--arc-dir")
    g.add_argument("--n-augment", dest="n_augment", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train with deep supervision")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--variant", choices=("hrm", "feedforward", "recurrent"))
    t.add_argument("--depth", type=int)
    t.add_argument("--loops", type=int)
    t.add_argument("--resume")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--M-max-eval", dest="M_max_eval", type=int)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("arc-eval", help="augment-solve-vote on ARC task files")
    common(a)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--arc-dir", required=True)
    a.add_argument("--n-augment", dest="n_augment", type=int, default=1000)
    a.set_defaults(func=cmd_arc_eval)

    z = sub.add_parser("analyze", help="write plot data for a diagnostic")
    common(z)
    z.add_argument("--checkpoint", required=True)
    z.add_argument("--data", required=True)
    z.add_argument("--mode", required=True)
    z.add_argument("--count", type=int, default=100)
    z.add_argument("--segments", type=int,
                   help="segments to trace (default: M_max for pr, 1 otherwise)")
    z.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="depth/width baseline sweep plus HRM")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--depths")
    s.add_argument("--widths")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("HRM_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError) as exc:
        logger.error("numerical abort: %s", exc)
        return 2
    except (InputError, ConfigError, GenerationError, ValueError, KeyError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
