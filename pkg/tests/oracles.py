"""Independent reference implementations used only by the tests."""

import heapq

import numpy as np


def brute_force_sudoku(givens, limit=2):
    """Exhaustive depth-first search, no propagation.

    At each level it branches on the empty cell with the fewest legal
    digits; every legal digit is tried, so all solutions are enumerated
    up to ``limit``.
    """
    grid = list(givens)
    rows, cols, boxes = [0] * 9, [0] * 9, [0] * 9
    for i, v in enumerate(grid):
        if v:
            r, c = divmod(i, 9)
            b = (r // 3) * 3 + c // 3
            bit = 1 << v
            if (rows[r] | cols[c] | boxes[b]) & bit:
                return []
            rows[r] |= bit
            cols[c] |= bit
            boxes[b] |= bit
    empty = [i for i, v in enumerate(grid) if v == 0]
    found = []

    def free(i):
        r, c = divmod(i, 9)
        used = rows[r] | cols[c] | boxes[(r // 3) * 3 + c // 3]
        return [v for v in range(1, 10) if not used & (1 << v)]

    def rec():
        if len(found) >= limit:
            return
        open_cells = [i for i in empty if grid[i] == 0]
        if not open_cells:
            found.append(tuple(grid))
            return
        i = min(open_cells, key=lambda j: len(free(j)))
        r, c = divmod(i, 9)
        b = (r // 3) * 3 + c // 3
        for v in free(i):
            bit = 1 << v
            grid[i] = v
            rows[r] |= bit
            cols[c] |= bit
            boxes[b] |= bit
            rec()
            rows[r] ^= bit
            cols[c] ^= bit
            boxes[b] ^= bit
            grid[i] = 0

    rec()
    return found


def sudoku_constraints_ok(grid):
    g = np.asarray(grid).reshape(9, 9)
    want = set(range(1, 10))
    for k in range(9):
        if set(g[k]) != want or set(g[:, k]) != want:
            return False
        r, c = divmod(k, 3)
        if set(g[3 * r:3 * r + 3, 3 * c:3 * c + 3].flatten()) != want:
            return False
    return True


def dijkstra_distance(walls, start, goal):
    """Unit-weight Dijkstra; returns the number of cells on a shortest path, or None."""
    H, W = walls.shape
    dist = {start: 1}
    heap = [(1, start)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if (r, c) == goal:
            return d
        if d > dist[(r, c)]:
            continue
        for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if 0 <= nr < H and 0 <= nc < W and not walls[nr, nc]:
                if d + 1 < dist.get((nr, nc), 1 << 30):
                    dist[(nr, nc)] = d + 1
                    heapq.heappush(heap, (d + 1, (nr, nc)))
    return None


def path_is_valid(path, walls, start, goal):
    if not path or tuple(path[0]) != tuple(start) or tuple(path[-1]) != tuple(goal):
        return False
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        if abs(r0 - r1) + abs(c0 - c1) != 1:
            return False
    return all(not walls[r, c] for r, c in path)
