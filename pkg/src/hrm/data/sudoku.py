"""Sudoku solving, grading, generation, augmentation and canonical keys.

Grids are flat sequences of 81 ints, row-major, ``0`` meaning blank.
Candidates are 9-bit masks (bit ``d-1`` set when digit ``d`` is possible).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import permutations

import numpy as np

ALL = 0x1FF

ROWS = [[r * 9 + c for c in range(9)] for r in range(9)]
COLS = [[r * 9 + c for r in range(9)] for c in range(9)]
BOXES = [[(br * 3 + i) * 9 + bc * 3 + j for i in range(3) for j in range(3)]
         for br in range(3) for bc in range(3)]
UNITS = ROWS + COLS + BOXES
PEERS = [sorted({p for u in UNITS if cell in u for p in u} - {cell}) for cell in range(81)]
BIT = {d: 1 << (d - 1) for d in range(1, 10)}
DIGIT = {1 << (d - 1): d for d in range(1, 10)}
POPCOUNT = [bin(m).count("1") for m in range(512)]


class GenerationError(RuntimeError):
    """Generation target not reached within the retry budget."""


@dataclass(frozen=True)
class SudokuPuzzle:
    givens: tuple[int, ...]
    solution: tuple[int, ...]
    difficulty: int


def is_valid_solution(grid) -> bool:
    if len(grid) != 81 or any(not 1 <= v <= 9 for v in grid):
        return False
    return all(len({grid[i] for i in unit}) == 9 for unit in UNITS)


def violation_mask(grid) -> list[int]:
    """1 for each filled cell sharing its digit with a peer."""
    return [int(grid[i] != 0 and any(grid[p] == grid[i] for p in PEERS[i])) for i in range(81)]


def _assign(cands: list[int], cell: int, bit: int) -> bool:
    """Fix ``cell`` to ``bit`` and propagate naked singles; False on contradiction."""
    stack = [(cell, bit)]
    while stack:
        cell, bit = stack.pop()
        if cands[cell] & bit == 0:
            return False
        cands[cell] = bit
        for p in PEERS[cell]:
            m = cands[p]
            if m & bit:
                m &= ~bit
                if m == 0:
                    return False
                cands[p] = m
                if POPCOUNT[m] == 1:
                    stack.append((p, m))
    return True


def _hidden_singles(cands: list[int]) -> int:
    """Assign every digit with a single possible cell in some unit.

    Returns the number of assignments made, or -1 on contradiction.
    """
    made = 0
    for unit in UNITS:
        once = twice = 0
        for i in unit:
            m = cands[i]
            twice |= once & m
            once |= m
        if once != ALL:
            return -1
        only = once & ~twice
        while only:
            bit = only & -only
            only ^= bit
            for i in unit:
                if cands[i] & bit:
                    if cands[i] != bit:
                        if not _assign(cands, i, bit):
                            return -1
                        made += 1
                    break
    return made


def propagate(cands: list[int]) -> bool:
    """Naked + hidden singles to a fixpoint, in place. False on contradiction."""
    while True:
        made = _hidden_singles(cands)
        if made < 0:
            return False
        if made == 0:
            return True


def candidates_from(givens) -> list[int] | None:
    if len(givens) != 81:
        raise ValueError("a sudoku grid has 81 cells")
    cands = [ALL] * 81
    for i, v in enumerate(givens):
        if v:
            if not 1 <= v <= 9:
                raise ValueError(f"cell value {v} out of range")
            if not _assign(cands, i, BIT[v]):
                return None
    return cands


@dataclass
class _Search:
    limit: int
    rng: np.random.Generator | None
    solutions: list
    backtracks: int = 0


def _dfs(cands: list[int], s: _Search) -> None:
    if not propagate(cands):
        return
    best, best_n = -1, 10
    for i, m in enumerate(cands):
        n = POPCOUNT[m]
        if 1 < n < best_n:
            best, best_n = i, n
            if n == 2:
                break
    if best < 0:
        s.solutions.append(tuple(DIGIT[m] for m in cands))
        return
    digits = [d for d in range(1, 10) if cands[best] & BIT[d]]
    if s.rng is not None:
        s.rng.shuffle(digits)
    for d in digits:
        trial = cands.copy()
        if _assign(trial, best, BIT[d]):
            found = len(s.solutions)
            _dfs(trial, s)
            if len(s.solutions) >= s.limit:
                return
            if len(s.solutions) == found:
                s.backtracks += 1
        else:
            s.backtracks += 1


def sudoku_solve(givens, max_solutions: int = 1, rng: np.random.Generator | None = None):
    """Solve by singles propagation plus DFS on a minimum-candidate cell.

    Returns ``(solutions, backtracks)`` where ``backtracks`` counts guessed
    branches that were retracted. With ``max_solutions=1`` the first element
    is the solution or ``None``; otherwise it is the list of up to
    ``max_solutions`` solutions.
    """
    cands = candidates_from(givens)
    s = _Search(max_solutions, rng, [])
    if cands is not None:
        _dfs(cands, s)
    if max_solutions == 1:
        return (s.solutions[0] if s.solutions else None), s.backtracks
    return s.solutions, s.backtracks


def count_solutions(givens, limit: int = 2) -> int:
    sols, _ = sudoku_solve(givens, max_solutions=limit)
    return len(sols)


def difficulty(givens) -> int:
    """Backtracks needed by the deterministic solver to reach the first solution."""
    return sudoku_solve(givens)[1]


def random_full_grid(rng: np.random.Generator) -> tuple[int, ...]:
    sol, _ = sudoku_solve([0] * 81, rng=rng)
    return sol


def sudoku_generate(rng: np.random.Generator, band: tuple[int, int] = (0, 10**9),
                    max_tries: int = 200) -> SudokuPuzzle:
    """Random full grid, then remove clues while the solution stays unique.

    A clue is only removed if the puzzle stays within ``band[1]`` backtracks;
    the finished puzzle is accepted when its difficulty is at least ``band[0]``.
    """
    lo, hi = band
    if lo > hi:
        raise ValueError("empty difficulty band")
    for _ in range(max_tries):
        solution = random_full_grid(rng)
        grid = list(solution)
        for cell in rng.permutation(81).tolist():
            keep = grid[cell]
            grid[cell] = 0
            if not _acceptable(grid, hi):
                grid[cell] = keep
        diff = difficulty(grid)
        if lo <= diff <= hi:
            return SudokuPuzzle(tuple(grid), solution, diff)
    raise GenerationError(f"no puzzle with difficulty in {band} after {max_tries} grids")


def _acceptable(grid, max_backtracks: int) -> bool:
    cands = candidates_from(grid)
    if cands is None:  # pragma: no cover - subsets of a solution are consistent
        return False
    if propagate(cands) and all(POPCOUNT[m] == 1 for m in cands):
        return True  # closed by propagation alone: unique, zero backtracks
    if max_backtracks == 0:
        return False
    if count_solutions(grid, 2) != 1:
        return False
    return difficulty(grid) <= max_backtracks


# ---------------------------------------------------------------- symmetry group

@dataclass(frozen=True)
class SudokuTransform:
    """Digit relabeling plus band/stack/row/column permutations.

    ``rows`` and ``cols`` are full 9-permutations that preserve the band
    structure; ``digits[d-1]`` is the new label of digit ``d``.
    """

    digits: tuple[int, ...]
    rows: tuple[int, ...]
    cols: tuple[int, ...]

    @classmethod
    def identity(cls) -> "SudokuTransform":
        r = tuple(range(9))
        return cls(tuple(range(1, 10)), r, r)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "SudokuTransform":
        def axis():
            bands = rng.permutation(3)
            return tuple(int(b * 3 + i) for b in bands for i in rng.permutation(3))
        return cls(tuple(int(d) for d in rng.permutation(9) + 1), axis(), axis())

    def apply(self, grid) -> tuple[int, ...]:
        out = []
        for r in range(9):
            for c in range(9):
                v = grid[self.rows[r] * 9 + self.cols[c]]
                out.append(self.digits[v - 1] if v else 0)
        return tuple(out)

    def inverse_digits(self, grid) -> tuple[int, ...]:
        inv = {new: old + 1 for old, new in enumerate(self.digits)}
        return tuple(inv[v] if v else 0 for v in grid)


def sudoku_augment(puzzle: SudokuPuzzle, rng: np.random.Generator | None = None,
                   transform: SudokuTransform | None = None) -> SudokuPuzzle:
    if transform is None:
        if rng is None:
            raise ValueError("need rng or transform")
        transform = SudokuTransform.random(rng)
    return replace(puzzle, givens=transform.apply(puzzle.givens),
                   solution=transform.apply(puzzle.solution))


def _axis_perms() -> np.ndarray:
    out = []
    for bands in permutations(range(3)):
        for a in permutations(range(3)):
            for b in permutations(range(3)):
                for c in permutations(range(3)):
                    inner = (a, b, c)
                    out.append([bands[k] * 3 + inner[k][i] for k in range(3) for i in range(3)])
    return np.asarray(out, dtype=np.int64)


_COL_PERMS = _axis_perms()  # 1296 x 9
_POW = 10 ** np.arange(8, -1, -1, dtype=np.int64)


def sudoku_canonical_key(grid) -> tuple[int, ...]:
    """Minimal form of a solution grid under the implemented symmetry group.

    Enumerates every choice of first row and column arrangement; the digit
    relabeling that maps the first row to ``1..9`` is then forced, and the
    remaining rows are ordered greedily (sorted within bands, bands sorted).
    Accepts a full solution grid or a :class:`SudokuPuzzle` (its solution).
    Returns nine row codes (each row read as a base-10 number).
    """
    if isinstance(grid, SudokuPuzzle):
        grid = grid.solution
    g = np.asarray(grid, dtype=np.int64).reshape(9, 9)
    best = None
    for r0 in range(9):
        band = r0 // 3
        same_band = [r for r in range(band * 3, band * 3 + 3) if r != r0]
        other_bands = [b for b in range(3) if b != band]
        order = [r0] + same_band + [b * 3 + i for b in other_bands for i in range(3)]
        sub = g[order][:, _COL_PERMS]  # 9 x 1296 x 9
        sub = sub.transpose(1, 0, 2)  # 1296 x 9 x 9
        relabel = np.zeros((len(_COL_PERMS), 10), dtype=np.int64)
        np.put_along_axis(relabel, sub[:, 0, :], np.arange(1, 10)[None, :], axis=1)
        lab = np.take_along_axis(relabel[:, None, :], sub, axis=2)
        codes = lab @ _POW  # 1296 x 9
        rest0 = np.sort(codes[:, 1:3], axis=1)
        b1 = np.sort(codes[:, 3:6], axis=1)
        b2 = np.sort(codes[:, 6:9], axis=1)
        swap = _lex_less(b2, b1)
        lo = np.where(swap[:, None], b2, b1)
        hi = np.where(swap[:, None], b1, b2)
        keys = np.concatenate([codes[:, :1], rest0, lo, hi], axis=1)
        idx = np.lexsort(keys.T[::-1])[0]
        cand = tuple(int(v) for v in keys[idx])
        if best is None or cand < best:
            best = cand
    return best


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    less = np.zeros(len(a), dtype=bool)
    decided = np.zeros(len(a), dtype=bool)
    for k in range(a.shape[1]):
        lt = (a[:, k] < b[:, k]) & ~decided
        gt = (a[:, k] > b[:, k]) & ~decided
        less |= lt
        decided |= lt | gt
    return less
