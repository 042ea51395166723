"""Token layouts for the three task families and batched token datasets.

Sudoku: ``{pad, 0..9}``, 81 positions. Maze: ``{pad, wall, open, start, goal,
path}``, 900 positions. ARC: ``{pad, eor, colors 0..9, puzzle ids...}``,
``1 + 31*30`` positions with the puzzle id at position 0 and each grid row
terminated by ``eor``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .arc import MAX_SIDE, ArcExample
from .maze import SIZE as MAZE_SIZE
from .maze import MazeInstance
from .sudoku import SudokuPuzzle

PAD = 0

SUDOKU_SEQ = 81
SUDOKU_VOCAB = 11  # pad + digits 0..9 (0 = blank)

WALL, OPEN, START, GOAL, PATH = 1, 2, 3, 4, 5
MAZE_SEQ = MAZE_SIZE * MAZE_SIZE
MAZE_VOCAB = 6

EOR = 1
COLOR0 = 2
PUZZLE0 = COLOR0 + 10
ARC_SEQ = 1 + (MAX_SIDE + 1) * MAX_SIDE

TASKS = ("sudoku", "maze", "arc")


def vocab_size(task: str, n_puzzles: int = 1) -> int:
    return {"sudoku": SUDOKU_VOCAB, "maze": MAZE_VOCAB, "arc": PUZZLE0 + n_puzzles}[task]


def seq_len(task: str) -> int:
    return {"sudoku": SUDOKU_SEQ, "maze": MAZE_SEQ, "arc": ARC_SEQ}[task]


@dataclass
class TokenExample:
    task: str
    input: list[int]
    target: list[int]
    puzzle_id: int | None = None
    difficulty: float | None = None

    def to_record(self) -> dict:
        # key order is part of the file format
        return {"task": self.task, "input": list(self.input), "target": list(self.target),
                "puzzle_id": self.puzzle_id, "difficulty": self.difficulty}

    @classmethod
    def from_record(cls, rec: dict) -> "TokenExample":
        return cls(rec["task"], list(rec["input"]), list(rec["target"]),
                   rec.get("puzzle_id"), rec.get("difficulty"))


# ---------------------------------------------------------------- sudoku

def sudoku_tokens(grid) -> list[int]:
    if len(grid) != 81:
        raise ValueError("sudoku grid must have 81 cells")
    return [int(v) + 1 for v in grid]


def sudoku_grid(tokens) -> list[int]:
    """Inverse of :func:`sudoku_tokens`; pad decodes as blank."""
    return [max(int(t) - 1, 0) for t in tokens]


# ---------------------------------------------------------------- maze

def maze_tokens(instance: MazeInstance, with_path: bool) -> list[int]:
    walls = np.asarray(instance.walls)
    if walls.shape != (MAZE_SIZE, MAZE_SIZE):
        raise ValueError(f"maze must be {MAZE_SIZE}x{MAZE_SIZE}, got {walls.shape}")
    grid = np.where(walls, WALL, OPEN)
    if with_path:
        for r, c in instance.optimal_path:
            grid[r, c] = PATH
    grid[instance.start] = START
    grid[instance.goal] = GOAL
    return grid.flatten().tolist()


def maze_decode(tokens) -> dict:
    """Walls, start, goal and path cells (start/goal included) from a token grid."""
    g = np.asarray(tokens, dtype=np.int64).reshape(MAZE_SIZE, MAZE_SIZE)
    starts = list(zip(*np.nonzero(g == START)))
    goals = list(zip(*np.nonzero(g == GOAL)))
    path = [tuple(map(int, c)) for c in zip(*np.nonzero(g == PATH))]
    start = tuple(map(int, starts[0])) if len(starts) == 1 else None
    goal = tuple(map(int, goals[0])) if len(goals) == 1 else None
    cells = set(path) | {c for c in (start, goal) if c is not None}
    return {"walls": g == WALL, "start": start, "goal": goal, "path_cells": cells}


# ---------------------------------------------------------------- arc

def arc_grid_tokens(grid) -> list[int]:
    g = np.asarray(grid, dtype=np.int64)
    if g.ndim != 2 or g.shape[0] > MAX_SIDE or g.shape[1] > MAX_SIDE:
        raise ValueError(f"ARC grid {g.shape} exceeds {MAX_SIDE}x{MAX_SIDE}")
    out = []
    for row in g:
        out.extend(int(v) + COLOR0 for v in row)
        out.append(EOR)
    return out


def arc_tokens(grid, puzzle_id: int) -> list[int]:
    body = arc_grid_tokens(grid)
    return [PUZZLE0 + puzzle_id] + body + [PAD] * (ARC_SEQ - 1 - len(body))


def arc_decode(tokens) -> np.ndarray | None:
    """Grid from an ARC token sequence (position 0 skipped).

    Reads rows up to the first token that is neither a color nor ``eor``.
    Returns None for ragged or empty grids.
    """
    rows, row = [], []
    for t in list(tokens)[1:]:
        t = int(t)
        if t == EOR:
            if not row:
                break
            rows.append(row)
            row = []
        elif COLOR0 <= t < PUZZLE0:
            row.append(t - COLOR0)
        else:
            break
    if not rows or row or len({len(r) for r in rows}) != 1:
        return None
    return np.asarray(rows, dtype=np.int64)


# ---------------------------------------------------------------- generic

def tokenize(instance, task: str | None = None) -> TokenExample:
    if isinstance(instance, SudokuPuzzle) or task == "sudoku":
        return TokenExample("sudoku", sudoku_tokens(instance.givens), sudoku_tokens(instance.solution),
                            None, float(instance.difficulty))
    if isinstance(instance, MazeInstance) or task == "maze":
        return TokenExample("maze", maze_tokens(instance, False), maze_tokens(instance, True),
                            None, float(instance.difficulty))
    if isinstance(instance, ArcExample) or task == "arc":
        target = (arc_tokens(instance.output, instance.puzzle_id) if instance.output is not None
                  else [PAD] * ARC_SEQ)
        return TokenExample("arc", arc_tokens(instance.input, instance.puzzle_id), target,
                            instance.puzzle_id, None)
    raise ValueError(f"cannot tokenize {type(instance).__name__} as {task!r}")


def detokenize(tokens, task: str):
    if task == "sudoku":
        return sudoku_grid(tokens)
    if task == "maze":
        return maze_decode(tokens)
    if task == "arc":
        return arc_decode(tokens)
    raise ValueError(f"unknown task {task!r}")


def target_mask(task: str, target) -> list[bool]:
    """Supervised positions. ARC supervises everything after the puzzle-id slot
    (trailing pads included, so the model learns where the grid ends)."""
    if task == "arc":
        return [False] + [True] * (len(target) - 1)
    return [int(t) != PAD for t in target]


@dataclass
class TokenDataset:
    inputs: torch.Tensor   # long [n, L]
    targets: torch.Tensor  # long [n, L]
    mask: torch.Tensor     # bool [n, L]
    examples: list[TokenExample] | None = None

    def __len__(self) -> int:
        return len(self.inputs)

    @classmethod
    def from_examples(cls, examples: list[TokenExample], seq: int | None = None) -> "TokenDataset":
        if not examples:
            L = seq or 1
            empty = torch.zeros(0, L, dtype=torch.long)
            return cls(empty, empty.clone(), empty.bool(), [])
        L = seq or max(len(e.input) for e in examples)
        pad = lambda xs: list(xs) + [PAD] * (L - len(xs))  # noqa: E731
        inputs = torch.tensor([pad(e.input) for e in examples], dtype=torch.long)
        targets = torch.tensor([pad(e.target) for e in examples], dtype=torch.long)
        mask = torch.tensor([pad(target_mask(e.task, e.target)) for e in examples], dtype=torch.bool)
        return cls(inputs, targets, mask, list(examples))

    @classmethod
    def from_arrays(cls, X, y, mask=None) -> "TokenDataset":
        inputs = torch.as_tensor(np.asarray(X), dtype=torch.long)
        targets = torch.as_tensor(np.asarray(y), dtype=torch.long)
        m = targets != PAD if mask is None else torch.as_tensor(np.asarray(mask), dtype=torch.bool)
        return cls(inputs, targets, m)

    def subset(self, idx) -> "TokenDataset":
        idx = list(idx)
        ex = [self.examples[i] for i in idx] if self.examples is not None else None
        t = torch.as_tensor(idx, dtype=torch.long)
        return TokenDataset(self.inputs[t], self.targets[t], self.mask[t], ex)
