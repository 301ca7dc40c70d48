from ..dynamics import NODE_TOL, TimeGrid
from ..errors import HorizonExceeded, UnalignedInterval
from ..stl import required_endpoints

MAX_PASSES = 8


def align_time_grid(f, grid):
    """Insert virtual nodes at every interval endpoint that falls between nodes.

    Returns ``(grid, ties)`` where each tie ``(v, r)`` says the hold starting
    at virtual node ``v`` reuses the input of the hold starting at real node
    ``r``, the last real node before ``v``.  Nested operators are evaluated
    at the nodes inside their parent window, so insertion repeats until no
    endpoint is missing.
    """
    tol = NODE_TOL * max(1.0, grid.t_f)
    missing = []
    for _ in range(MAX_PASSES):
        ends = required_endpoints(f, grid)
        beyond = [t for t in ends if t > grid.t_f + tol or t < -tol]
        if beyond:
            raise HorizonExceeded(f"interval endpoints {beyond} outside [0, {grid.t_f:g}]")
        missing = sorted({round(t, 12) for t in ends if grid.index_of(t) is None})
        if not missing:
            break
        pts = sorted([(t, v) for t, v in zip(grid.nodes, grid.virtual)] + [(t, True) for t in missing])
        grid = TimeGrid(tuple(t for t, _ in pts), tuple(v for _, v in pts))
    else:
        raise UnalignedInterval(missing)
    ties = []
    last_real = 0
    for i in range(grid.N):
        if grid.virtual[i]:
            ties.append((i, last_real))
        else:
            last_real = i
    return grid, ties
