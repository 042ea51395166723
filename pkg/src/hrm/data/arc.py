"""ARC-style grid tasks: loading, invertible augmentation and prediction voting."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MAX_SIDE = 30
N_COLORS = 10


class TransformError(ValueError):
    """The transformed grid would not fit in the 30x30 canvas."""


@dataclass(frozen=True)
class ArcExample:
    input: np.ndarray
    output: np.ndarray | None
    puzzle_id: int
    role: str = "demonstration"


@dataclass(frozen=True)
class ArcTransform:
    """Dihedral element, then color permutation, then translation.

    ``dihedral`` in 0..7: ``k = dihedral % 4`` quarter turns, transposed first
    when ``dihedral >= 4``. ``colors[c]`` is the new color of ``c``.
    Translation pads with ``background`` above/left of the grid.
    """

    dihedral: int = 0
    colors: tuple[int, ...] = tuple(range(N_COLORS))
    shift: tuple[int, int] = (0, 0)
    background: int = 0

    @classmethod
    def random(cls, rng: np.random.Generator, max_shift: int = 0,
               keep_background: bool = True) -> "ArcTransform":
        if keep_background:
            colors = (0,) + tuple(int(c) for c in rng.permutation(np.arange(1, N_COLORS)))
        else:
            colors = tuple(int(c) for c in rng.permutation(N_COLORS))
        shift = tuple(int(v) for v in rng.integers(0, max_shift + 1, size=2))
        return cls(int(rng.integers(8)), colors, shift)


def _dihedral(g: np.ndarray, k: int) -> np.ndarray:
    if k >= 4:
        g = g.T
    return np.rot90(g, k % 4)


def _dihedral_inv(g: np.ndarray, k: int) -> np.ndarray:
    g = np.rot90(g, -(k % 4))
    return g.T if k >= 4 else g


def transform_grid(grid, t: ArcTransform) -> np.ndarray:
    g = _dihedral(np.asarray(grid, dtype=np.int64), t.dihedral)
    g = np.asarray(t.colors, dtype=np.int64)[g]
    dy, dx = t.shift
    if g.shape[0] + dy > MAX_SIDE or g.shape[1] + dx > MAX_SIDE:
        raise TransformError(f"grid {g.shape} shifted by {t.shift} exceeds {MAX_SIDE}x{MAX_SIDE}")
    if dy or dx:
        out = np.full((g.shape[0] + dy, g.shape[1] + dx), t.colors[t.background], dtype=np.int64)
        out[dy:, dx:] = g
        g = out
    return np.ascontiguousarray(g)


def arc_invert(grid, t: ArcTransform) -> np.ndarray:
    g = np.asarray(grid, dtype=np.int64)
    dy, dx = t.shift
    g = g[dy:, dx:]
    inv = np.empty(N_COLORS, dtype=np.int64)
    inv[np.asarray(t.colors)] = np.arange(N_COLORS)
    return np.ascontiguousarray(_dihedral_inv(inv[g], t.dihedral))


def arc_augment(example: ArcExample, t: ArcTransform) -> ArcExample:
    out = None if example.output is None else transform_grid(example.output, t)
    return replace(example, input=transform_grid(example.input, t), output=out)


def arc_vote(predictions) -> tuple[np.ndarray, np.ndarray]:
    """Two most frequent grids; ties go to the earlier first occurrence."""
    if not predictions:
        raise ValueError("no predictions to vote on")
    counts: dict[tuple, list] = {}
    for i, p in enumerate(predictions):
        p = np.asarray(p)
        key = (p.shape, p.tobytes())
        if key not in counts:
            counts[key] = [0, i, p]
        counts[key][0] += 1
    ranked = sorted(counts.values(), key=lambda e: (-e[0], e[1]))
    first = ranked[0][2]
    second = ranked[1][2] if len(ranked) > 1 else first
    return first, second


def _grid(rows) -> np.ndarray:
    g = np.asarray(rows, dtype=np.int64)
    if g.ndim != 2 or not (1 <= g.shape[0] <= MAX_SIDE and 1 <= g.shape[1] <= MAX_SIDE):
        raise ValueError(f"bad ARC grid shape {g.shape}")
    if g.min() < 0 or g.max() >= N_COLORS:
        raise ValueError("ARC colors must be in 0..9")
    return g


def load_arc_task(path, puzzle_id: int) -> tuple[list[ArcExample], list[ArcExample]]:
    """Read one task file; returns ``(demonstrations, tests)``. Test outputs may be absent."""
    data = json.loads(Path(path).read_text())
    demos = [ArcExample(_grid(p["input"]), _grid(p["output"]), puzzle_id, "demonstration")
             for p in data["train"]]
    tests = [ArcExample(_grid(p["input"]), _grid(p["output"]) if "output" in p else None,
                        puzzle_id, "test") for p in data["test"]]
    return demos, tests


def load_arc_dir(directory) -> dict[str, tuple[list[ArcExample], list[ArcExample]]]:
    """All ``*.json`` tasks in a directory, puzzle ids assigned in sorted filename order."""
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no ARC task files in {directory}")
    return {f.stem: load_arc_task(f, i) for i, f in enumerate(files)}
