"""Dataset generation, group-aware splitting and JSON-lines persistence."""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from . import arc as arc_mod
from .maze import maze_generate
from .sudoku import GenerationError, SudokuTransform, sudoku_augment, sudoku_canonical_key, sudoku_generate
from .tokens import TokenExample, seq_len, tokenize, vocab_size

FORMAT = "hrm-dataset/1"


@dataclass
class DatasetSplit:
    train: list
    test: list
    provenance: dict[str, Any] = field(default_factory=dict)


def build_split(instances: list, keys: list, ratio: float = 0.9, seed: int = 0) -> DatasetSplit:
    """Split whole key-groups so equivalent instances never straddle train/test."""
    if len(instances) != len(keys):
        raise ValueError("one key per instance required")
    groups: dict[Any, list[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    if len(groups) < 2:
        raise ValueError("need at least two equivalence groups to split")
    order = list(groups)
    perm = np.random.default_rng(seed).permutation(len(order))
    n_train = min(max(int(round(ratio * len(order))), 1), len(order) - 1)
    train_keys = [order[i] for i in perm[:n_train]]
    test_keys = [order[i] for i in perm[n_train:]]
    train = [instances[i] for k in train_keys for i in groups[k]]
    test = [instances[i] for k in test_keys for i in groups[k]]
    prov = {"ratio": ratio, "seed": seed, "groups": len(order),
            "train_groups": n_train, "test_groups": len(order) - n_train}
    return DatasetSplit(train, test, prov)


# ---------------------------------------------------------------- generation

def _sudoku_one(args):
    seed, i, band = args
    return sudoku_generate(np.random.default_rng([seed, i]), band=tuple(band))


def _maze_one(args):
    seed, i, kwargs = args
    return maze_generate(np.random.default_rng([seed, i]), **kwargs)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("HRM_THREADS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn: Callable, jobs: list, workers: int | None = None) -> list:
    workers = worker_count() if workers is None else workers
    out: list = []
    try:
        if workers <= 1 or len(jobs) < 2:
            for j in jobs:
                out.append(fn(j))
        else:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                for r in ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))):
                    out.append(r)
    except GenerationError as exc:
        raise GenerationError(f"{exc} (generated {len(out)} of {len(jobs)} instances)") from exc
    return out


def generate_sudoku(count: int, seed: int, band=(0, 10**9), workers: int | None = None):
    """``count`` puzzles, instance ``i`` drawn from its own stream ``(seed, i)``."""
    return _parallel_map(_sudoku_one, [(seed, i, tuple(band)) for i in range(count)], workers)


def generate_mazes(count: int, seed: int, workers: int | None = None, **kwargs):
    return _parallel_map(_maze_one, [(seed, i, kwargs) for i in range(count)], workers)


def augment_sudoku(puzzles, copies: int, seed: int):
    """Each puzzle followed by ``copies`` random relabelings/permutations of it."""
    rng = np.random.default_rng(seed)
    out = []
    for p in puzzles:
        out.append(p)
        out.extend(sudoku_augment(p, transform=SudokuTransform.random(rng)) for _ in range(copies))
    return out


def sudoku_split(puzzles, ratio: float = 0.9, seed: int = 0) -> DatasetSplit:
    keys = [sudoku_canonical_key(p) for p in puzzles]
    return build_split(list(puzzles), keys, ratio, seed)


def arc_examples(directory, n_augment: int = 0, seed: int = 0, max_shift: int = 0):
    """Training examples from an ARC task directory.

    Every demonstration pair, each followed by ``n_augment`` random
    augmentations. Test pairs are left out so their labels can score
    ``arc-eval``. Returns ``(examples, id_map)``.
    """
    tasks = arc_mod.load_arc_dir(directory)
    rng = np.random.default_rng(seed)
    out = []
    for demos, _ in tasks.values():
        for ex in demos:
            out.append(ex)
            for _ in range(n_augment):
                for _attempt in range(16):
                    t = arc_mod.ArcTransform.random(rng, max_shift=max_shift)
                    try:
                        out.append(arc_mod.arc_augment(ex, t))
                        break
                    except arc_mod.TransformError:
                        continue
    id_map = {name: i for i, name in enumerate(tasks)}
    return out, id_map


# ---------------------------------------------------------------- files

def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(examples: Iterable[TokenExample], provenance: dict[str, Any]) -> str:
    lines = [json.dumps({"provenance": provenance}, sort_keys=True)]
    lines.extend(json.dumps(e.to_record()) for e in examples)
    return "\n".join(lines) + "\n"


def write_jsonl(path, examples: Iterable[TokenExample], provenance: dict[str, Any]) -> None:
    atomic_write(path, dumps_jsonl(examples, provenance))


def read_jsonl(path) -> tuple[dict[str, Any], list[TokenExample]]:
    provenance: dict[str, Any] = {}
    examples = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f):
            if not line.strip():
                continue
            rec = json.loads(line)
            if n == 0 and "provenance" in rec:
                provenance = rec["provenance"]
                continue
            examples.append(TokenExample.from_record(rec))
    return provenance, examples


def provenance_for(task: str, count: int, seed: int, **extra) -> dict[str, Any]:
    n_puzzles = extra.pop("n_puzzles", 1)
    return {"format": FORMAT, "task": task, "count": count, "seed": seed,
            "vocab_size": vocab_size(task, n_puzzles), "seq_len": seq_len(task), **extra}


def tokenize_all(instances) -> list[TokenExample]:
    return [tokenize(x) for x in instances]
