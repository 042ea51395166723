"""30x30 grid mazes (carved corridors or i.i.d. walls), filtered by shortest-path length."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .sudoku import GenerationError

SIZE = 30
MIN_DIFFICULTY = 110
# N, E, S, W
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))

Cell = tuple[int, int]


@dataclass(frozen=True)
class MazeInstance:
    walls: np.ndarray  # bool [H, W], True = wall
    start: Cell
    goal: Cell
    optimal_path: tuple[Cell, ...]

    @property
    def difficulty(self) -> int:
        """Shortest-path length in cells, start and goal included."""
        return len(self.optimal_path)


def maze_bfs(walls: np.ndarray, start: Cell, goal: Cell) -> list[Cell] | None:
    """Shortest 4-neighbour path from start to goal (inclusive), or None."""
    H, W = walls.shape
    if walls[start] or walls[goal]:
        raise ValueError("start and goal must be open cells")
    parent = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            path = []
            while cell is not None:
                path.append(cell)
                cell = parent[cell]
            return path[::-1]
        r, c = cell
        for dr, dc in MOVES:
            nr, nc = r + dr, c + dc
            if 0 <= nr < H and 0 <= nc < W and not walls[nr, nc] and (nr, nc) not in parent:
                parent[(nr, nc)] = cell
                queue.append((nr, nc))
    return None


def iid_walls(rng: np.random.Generator, size: int = SIZE,
              density: tuple[float, float] = (0.3, 0.5)) -> np.ndarray:
    """Walls placed independently at a density drawn uniformly from ``density``."""
    return rng.random((size, size)) < rng.uniform(*density)


def carved_walls(rng: np.random.Generator, size: int = SIZE,
                 braid: tuple[float, float] = (0.0, 0.1)) -> np.ndarray:
    """Randomized depth-first corridor maze with some extra openings.

    Rooms sit on even coordinates; a spanning tree of rooms is carved and then
    a fraction (uniform in ``braid``) of the remaining room-to-room walls is
    knocked out, so mazes have loops and the shortest path is not the only one.
    """
    walls = np.ones((size, size), dtype=bool)
    rooms = (size + 1) // 2
    seen = np.zeros((rooms, rooms), dtype=bool)
    stack = [(int(rng.integers(rooms)), int(rng.integers(rooms)))]
    seen[stack[0]] = True
    walls[stack[0][0] * 2, stack[0][1] * 2] = False
    while stack:
        r, c = stack[-1]
        options = [(dr, dc) for dr, dc in MOVES
                   if 0 <= r + dr < rooms and 0 <= c + dc < rooms and not seen[r + dr, c + dc]]
        if not options:
            stack.pop()
            continue
        dr, dc = options[int(rng.integers(len(options)))]
        nr, nc = r + dr, c + dc
        seen[nr, nc] = True
        walls[2 * r + dr, 2 * c + dc] = False
        walls[2 * nr, 2 * nc] = False
        stack.append((nr, nc))
    # closed walls between two rooms: odd on exactly one axis, inside the room lattice
    idx = np.indices((size, size))
    between = ((idx[0] % 2) != (idx[1] % 2)) & (idx[0] < 2 * rooms - 1) & (idx[1] < 2 * rooms - 1)
    candidates = np.flatnonzero(between & walls)
    n_open = int(round(rng.uniform(*braid) * len(candidates)))
    if n_open:
        walls.flat[rng.choice(candidates, size=n_open, replace=False)] = False
    return walls


def maze_generate(rng: np.random.Generator, size: int = SIZE, min_difficulty: int = MIN_DIFFICULTY,
                  style: str = "carved", max_tries: int = 10_000, **wall_kwargs) -> MazeInstance:
    """Sample a wall layout and distinct open start/goal; keep it if hard enough.

    Accepted iff the goal is reachable and the shortest path has strictly more
    than ``min_difficulty`` cells. ``style`` is ``"carved"`` (corridor maze) or
    ``"iid"`` (independent walls; rarely passes the default filter on 30x30).
    """
    make = {"carved": carved_walls, "iid": iid_walls}[style]
    for _ in range(max_tries):
        walls = make(rng, size, **wall_kwargs)
        open_cells = np.flatnonzero(~walls)
        if len(open_cells) < 2:
            continue
        a, b = rng.choice(open_cells, size=2, replace=False)
        start, goal = divmod(int(a), size), divmod(int(b), size)
        path = maze_bfs(walls, start, goal)
        if path is not None and len(path) > min_difficulty:
            return MazeInstance(walls, start, goal, tuple(path))
    raise GenerationError(f"no {style} maze with path > {min_difficulty} cells in {max_tries} tries")


def maze_check(path, instance: MazeInstance) -> str:
    """Classify an ordered cell path as ``"correct"``, ``"suboptimal"`` or ``"invalid"``."""
    path = [tuple(map(int, c)) for c in path]
    H, W = instance.walls.shape
    if not path or path[0] != tuple(instance.start) or path[-1] != tuple(instance.goal):
        return "invalid"
    for r, c in path:
        if not (0 <= r < H and 0 <= c < W) or instance.walls[r, c]:
            return "invalid"
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        if abs(r0 - r1) + abs(c0 - c1) != 1:
            return "invalid"
    return "correct" if len(path) == len(instance.optimal_path) else "suboptimal"


def order_path_cells(cells, start: Cell, goal: Cell) -> list[Cell] | None:
    """Turn an unordered set of path cells into a start-to-goal walk.

    Returns None unless the cells form a single simple chain from start to
    goal (every step has exactly one unvisited neighbour in the set).
    """
    remaining = {tuple(map(int, c)) for c in cells}
    start, goal = tuple(start), tuple(goal)
    if start not in remaining or goal not in remaining:
        return None
    walk = [start]
    remaining.discard(start)
    cell = start
    while cell != goal:
        nxt = [(cell[0] + dr, cell[1] + dc) for dr, dc in MOVES
               if (cell[0] + dr, cell[1] + dc) in remaining]
        if len(nxt) != 1:
            return None
        cell = nxt[0]
        remaining.discard(cell)
        walk.append(cell)
    return walk if not remaining else None
