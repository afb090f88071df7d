"""Benchmark domains and distractor-reward generation."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mdp import Mdp, RewardFunction

DEFAULT_POOL_SIZE = 500
RANDOM_DISCOUNT = 0.95
GRID_DISCOUNT = 0.95

# grid actions, row 0 is the top row
UP, RIGHT, DOWN, LEFT = range(4)
_MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}


class LayoutError(ValueError):
    """Raised for malformed grid layout files."""


@dataclass(frozen=True, eq=False)
class DomainSpec:
    name: str
    mdp: Mdp
    true_reward: RewardFunction
    pool_size: int = DEFAULT_POOL_SIZE
    pool_seed: int = 0
    pool_builder: Callable[["DomainSpec", int, int], list] | None = field(default=None, repr=False)
    metadata: dict = field(default_factory=dict)

    def reward_pool(self, count: int | None = None, seed: int | None = None) -> list[RewardFunction]:
        count = self.pool_size if count is None else count
        seed = self.pool_seed if seed is None else seed
        if self.pool_builder is not None:
            return self.pool_builder(self, count, seed)
        return random_reward_pool(self.mdp, self.true_reward, count, seed)


# --------------------------------------------------------------------------
# random MDPs

def random_mdp(num_states: int, num_actions: int, seed: int = 0,
               discount: float = RANDOM_DISCOUNT) -> Mdp:
    """Transition rows drawn from a flat Dirichlet."""
    if num_states < 1 or num_actions < 1:
        raise ValueError("sizes must be at least 1")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(num_states), size=(num_actions, num_states))
    P /= P.sum(axis=2, keepdims=True)
    return Mdp.from_arrays(P, discount)


def random_state_reward(mdp: Mdp, seed: int = 0, nonzero_fraction: float = 0.5) -> RewardFunction:
    rng = np.random.default_rng(seed)
    k = max(1, int(round(nonzero_fraction * mdp.num_states)))
    r = np.zeros(mdp.num_states)
    r[rng.choice(mdp.num_states, size=k, replace=False)] = rng.uniform(-1.0, 1.0, size=k)
    return RewardFunction.from_state(r, mdp.num_actions)


def random_reward_pool(mdp: Mdp, true_reward: RewardFunction, count: int,
                       seed: int = 0) -> list[RewardFunction]:
    """``true_reward`` followed by ``count - 1`` distractors of matching sparsity and range.

    Distractors place the same number of nonzeros uniformly at random (over
    states for state-only rewards, over state-action pairs otherwise) with
    values uniform on the range of the true nonzeros.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    true_reward.check_compatible(mdp)
    rng = np.random.default_rng(seed)
    S, A = true_reward.values.shape
    state_only = true_reward.is_state_only
    support = true_reward.values[:, 0] if state_only else true_reward.values.ravel()
    nz = support[support != 0]
    lo, hi = (float(nz.min()), float(nz.max())) if nz.size else (0.0, 0.0)
    pool = [true_reward]
    for _ in range(count - 1):
        vec = np.zeros(support.size)
        idx = rng.choice(support.size, size=nz.size, replace=False)
        vec[idx] = rng.uniform(lo, hi, size=nz.size)
        if state_only:
            pool.append(RewardFunction.from_state(vec, A))
        else:
            pool.append(RewardFunction(vec.reshape(S, A)))
    return pool


def random_domain(num_states: int, num_actions: int, seed: int = 0) -> DomainSpec:
    mdp = random_mdp(num_states, num_actions, seed)
    reward = random_state_reward(mdp, seed + 10_000)
    return DomainSpec(f"random-{num_states}x{num_actions}", mdp, reward, pool_seed=seed + 20_000)


# --------------------------------------------------------------------------
# grid helpers

def _grid_step(r: int, c: int, action: int, height: int, width: int, blocked=None):
    dr, dc = _MOVES[action]
    nr, nc = r + dr, c + dc
    if not (0 <= nr < height and 0 <= nc < width):
        return r, c
    if blocked is not None and blocked(r, c, nr, nc):
        return r, c
    return nr, nc


def _deterministic_grid(height: int, width: int, discount: float, blocked=None) -> Mdp:
    S = height * width
    mats = []
    for a in range(4):
        cols = np.empty(S, dtype=np.int64)
        for r in range(height):
            for c in range(width):
                nr, nc = _grid_step(r, c, a, height, width, blocked)
                cols[r * width + c] = nr * width + nc
        mats.append(sp.csr_matrix((np.ones(S), (np.arange(S), cols)), shape=(S, S)))
    return Mdp.from_arrays(mats, discount, sparse=True)


# --------------------------------------------------------------------------
# puddle world

PUDDLE_SIZE = 20
_PUDDLES = (((0.10, 0.75), (0.45, 0.75)), ((0.45, 0.40), (0.45, 0.80)))
_PUDDLE_RADIUS = 0.1
# displacement along the commanded direction and its probability
PUDDLE_MOTION = ((-1, 0.06), (0, 0.24), (1, 0.40), (2, 0.24), (3, 0.06))


def _segment_distance(p, a, b) -> float:
    p, a, b = map(np.asarray, (p, a, b))
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def puddle_penalty(size: int = PUDDLE_SIZE) -> np.ndarray:
    """Per-cell penalty in [-1, 0], quadratic in the depth inside a puddle."""
    depth = np.zeros((size, size))
    for r in range(size):
        for c in range(size):
            p = ((c + 0.5) / size, 1.0 - (r + 0.5) / size)
            d = max(_PUDDLE_RADIUS - _segment_distance(p, a, b) for a, b in _PUDDLES)
            depth[r, c] = max(d, 0.0)
    return -(depth / depth.max()) ** 2


def puddle_world() -> DomainSpec:
    n = PUDDLE_SIZE
    S = n * n
    mats = []
    for a in range(4):
        dr, dc = _MOVES[a]
        M = sp.lil_matrix((S, S))
        for r in range(n):
            for c in range(n):
                for steps, prob in PUDDLE_MOTION:
                    nr = min(max(r + steps * dr, 0), n - 1)
                    nc = min(max(c + steps * dc, 0), n - 1)
                    M[r * n + c, nr * n + nc] += prob
        mats.append(M.tocsr())
    mdp = Mdp.from_arrays(mats, 0.95, sparse=True)
    r = puddle_penalty(n)
    goal = 0 * n + (n - 1)
    r = r.ravel()
    r[goal] = 1.0
    return DomainSpec("puddle", mdp, RewardFunction.from_state(r, 4),
                      metadata={"shape": (n, n), "goal": goal})


# --------------------------------------------------------------------------
# trap world

TRAP_ROOM = 10
TRAP_ROOMS = ((0, 0), (1, 1), (0, 2))


def canonical_trap_layout() -> str:
    """Text layout of the 30x30, nine-room trap world.

    Cells sit at odd (row, col) character positions; the characters between
    them are ``#`` for a wall and a space for an opening.
    """
    n_rooms, size = 3, TRAP_ROOM
    H = W = n_rooms * size
    grid = [["+" if (i % 2 == 0 and j % 2 == 0) else " " for j in range(2 * W + 1)]
            for i in range(2 * H + 1)]

    def room(r, c):
        return r // size, c // size

    for r in range(H):
        for c in range(W):
            rm = room(r, c)
            ch = "T" if rm in TRAP_ROOMS else "."
            if rm in TRAP_ROOMS and (r, c) == (rm[0] * size + size - 1, rm[1] * size):
                ch = "E"
            grid[2 * r + 1][2 * c + 1] = ch
    grid[2 * (H - 1) + 1][2 * (W - 1) + 1] = "G"
    for i in range(2 * H + 1):
        for j in range(2 * W + 1):
            if i in (0, 2 * H) or j in (0, 2 * W):
                grid[i][j] = "#" if not (i % 2 == 0 and j % 2 == 0) else "+"
    door = (4, 5)
    # walls between rooms: solid with a two-cell door between safe rooms,
    # open between a trap room and its safe neighbour
    for r in range(H):
        for c in range(W):
            for dr, dc in ((0, 1), (1, 0)):
                nr, nc = r + dr, c + dc
                if nr >= H or nc >= W or room(r, c) == room(nr, nc):
                    continue
                a, b = room(r, c), room(nr, nc)
                trap_a, trap_b = a in TRAP_ROOMS, b in TRAP_ROOMS
                offset = c % size if dr else r % size
                if trap_a and trap_b:
                    wall = True
                elif trap_a or trap_b:
                    wall = False
                else:
                    wall = offset not in door
                grid[2 * r + 1 + dr][2 * c + 1 + dc] = "#" if wall else " "
    return "\n".join("".join(row) for row in grid) + "\n"


def parse_trap_layout(text: str):
    """Parse a layout into ``(cell_types, walls_right, walls_down)`` arrays."""
    lines = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip() != ""]
    if len(lines) < 3 or len(lines) % 2 == 0:
        raise LayoutError("layout must have an odd number (>= 3) of lines")
    width = max(len(ln) for ln in lines)
    if width < 3 or width % 2 == 0:
        raise LayoutError("layout rows must have odd length")
    lines = [ln.ljust(width) for ln in lines]
    H, W = (len(lines) - 1) // 2, (width - 1) // 2
    cells = np.empty((H, W), dtype="<U1")
    right = np.zeros((H, W), dtype=bool)
    down = np.zeros((H, W), dtype=bool)
    for r in range(H):
        for c in range(W):
            ch = lines[2 * r + 1][2 * c + 1]
            if ch not in ".TEG":
                raise LayoutError(f"unknown cell character {ch!r} at cell ({r}, {c})")
            cells[r, c] = ch
            right[r, c] = lines[2 * r + 1][2 * c + 2] == "#"
            down[r, c] = lines[2 * r + 2][2 * c + 1] == "#"
    if not np.any(cells == "G"):
        raise LayoutError("layout has no goal cell")
    return cells, right, down


def _trap_components(cells, right, down):
    H, W = cells.shape
    comp = -np.ones((H, W), dtype=int)
    n = 0
    for r in range(H):
        for c in range(W):
            if cells[r, c] not in "TE" or comp[r, c] >= 0:
                continue
            stack = [(r, c)]
            comp[r, c] = n
            while stack:
                y, x = stack.pop()
                for ny, nx, wall in ((y, x + 1, x + 1 < W and right[y, x]),
                                     (y + 1, x, y + 1 < H and down[y, x]),
                                     (y, x - 1, x > 0 and right[y, x - 1]),
                                     (y - 1, x, y > 0 and down[y - 1, x])):
                    if 0 <= ny < H and 0 <= nx < W and not wall and cells[ny, nx] in "TE" \
                            and comp[ny, nx] < 0:
                        comp[ny, nx] = n
                        stack.append((ny, nx))
            n += 1
    return comp


def load_trap_layout(path: str | Path | None = None) -> str:
    if path is None:
        return resources.files("gbsirl").joinpath("data/trap_world.txt").read_text()
    return Path(path).read_text()


def trap_world(layout_path: str | Path | None = None) -> DomainSpec:
    """Deterministic room world; trap rooms are left only through their exit cell."""
    cells, right, down = parse_trap_layout(load_trap_layout(layout_path))
    H, W = cells.shape
    comp = _trap_components(cells, right, down)

    def blocked(r, c, nr, nc):
        if nc == c + 1 and right[r, c] or nc == c - 1 and right[r, nc]:
            return True
        if nr == r + 1 and down[r, c] or nr == r - 1 and down[nr, c]:
            return True
        return cells[r, c] == "T" and comp[nr, nc] != comp[r, c]

    mdp = _deterministic_grid(H, W, 0.95, blocked)
    r = (cells == "G").astype(float).ravel()
    goal = int(np.flatnonzero(r)[0])
    return DomainSpec("trap", mdp, RewardFunction.from_state(r, 4),
                      metadata={"shape": (H, W), "goal": goal})


# --------------------------------------------------------------------------
# driver

DRIVER_LANES = 5
DRIVER_CAR_LANES = 3  # other cars use the central lanes 1..3
DRIVER_ROWS = 5
DRIVER_CARS = 3
CAR_CODES = DRIVER_CAR_LANES * DRIVER_ROWS  # 15
CRASH_PENALTY = -10.0
SHOULDER_PENALTY = -1.0
LANE_CHANGE_PENALTY = -0.1


def driver_decode(states: np.ndarray):
    """Agent lane and per-car (absolute lane, row) for state indices."""
    states = np.asarray(states)
    lane = states // CAR_CODES ** DRIVER_CARS
    rest = states % CAR_CODES ** DRIVER_CARS
    codes = []
    for k in range(DRIVER_CARS):
        codes.append(rest // CAR_CODES ** (DRIVER_CARS - 1 - k) % CAR_CODES)
    codes = np.stack(codes, axis=-1)
    return lane, 1 + codes // DRIVER_ROWS, codes % DRIVER_ROWS


def driver_world() -> DomainSpec:
    """Highway with five lanes and three slower cars cycling through the central lanes.

    A car in row 0 is alongside the agent; each step every car drops one row
    and a car leaving row 0 re-enters at the far row one lane to the right
    (cyclically over the central lanes). Actions pick the agent's lane.
    """
    S = DRIVER_LANES * CAR_CODES ** DRIVER_CARS
    A = DRIVER_LANES
    states = np.arange(S)
    lane, car_lane, car_row = driver_decode(states)
    wrapped = car_row == 0
    new_row = np.where(wrapped, DRIVER_ROWS - 1, car_row - 1)
    # zero-based lane index, shifted one lane right on re-entry
    new_car_lane = np.where(wrapped, car_lane % DRIVER_CAR_LANES, car_lane - 1)
    new_codes = new_car_lane * DRIVER_ROWS + new_row
    cars_index = np.zeros(S, dtype=np.int64)
    for k in range(DRIVER_CARS):
        cars_index = cars_index * CAR_CODES + new_codes[:, k]
    mats = []
    for a in range(A):
        nxt = a * CAR_CODES ** DRIVER_CARS + cars_index
        mats.append(sp.csr_matrix((np.ones(S), (states, nxt)), shape=(S, S)))
    mdp = Mdp.from_arrays(mats, 0.95, sparse=True)

    crash = np.any((car_row == 0) & (car_lane == lane[:, None]), axis=1)
    shoulder = (lane == 0) | (lane == DRIVER_LANES - 1)
    base = CRASH_PENALTY * crash + SHOULDER_PENALTY * shoulder
    change = LANE_CHANGE_PENALTY * np.abs(np.arange(A)[None, :] - lane[:, None])
    reward = RewardFunction(base[:, None] + change)
    return DomainSpec("driver", mdp, reward)


# --------------------------------------------------------------------------
# 19x10 grid

GRID_WIDTH, GRID_HEIGHT = 19, 10


def grid_potential(goal: int, width: int = GRID_WIDTH, height: int = GRID_HEIGHT) -> np.ndarray:
    """Negative Manhattan distance to ``goal`` scaled to [-1, 0]."""
    gr, gc = divmod(goal, width)
    rows, cols = np.divmod(np.arange(width * height), width)
    dist = np.abs(rows - gr) + np.abs(cols - gc)
    return -dist / (width + height - 2)


def shape_reward(reward: RewardFunction, width: int = GRID_WIDTH,
                 height: int = GRID_HEIGHT) -> RewardFunction:
    """Add the distance potential of the reward's (first) maximum to every state."""
    state_r = reward.state_values
    goal = int(np.argmax(state_r))
    return RewardFunction.from_state(state_r + grid_potential(goal, width, height),
                                     reward.values.shape[1])


def _shaped_pool(spec: DomainSpec, count: int, seed: int) -> list[RewardFunction]:
    sparse = spec.metadata["sparse_reward"]
    pool = random_reward_pool(spec.mdp, sparse, count, seed)
    return [shape_reward(r) for r in pool]


def grid_world_19x10(shaped: bool = False) -> DomainSpec:
    mdp = _deterministic_grid(GRID_HEIGHT, GRID_WIDTH, GRID_DISCOUNT)
    goal = GRID_WIDTH - 1
    r = np.zeros(GRID_WIDTH * GRID_HEIGHT)
    r[goal] = 1.0
    sparse = RewardFunction.from_state(r, 4)
    meta = {"shape": (GRID_HEIGHT, GRID_WIDTH), "goal": goal, "sparse_reward": sparse}
    if not shaped:
        return DomainSpec("grid19x10-sparse", mdp, sparse, metadata=meta)
    return DomainSpec("grid19x10-shaped", mdp, shape_reward(sparse),
                      pool_builder=_shaped_pool, metadata=meta)


# --------------------------------------------------------------------------
# registry

_NAMED: dict[str, Callable[[], DomainSpec]] = {
    "puddle": puddle_world,
    "trap": trap_world,
    "driver": driver_world,
    "grid19x10-sparse": lambda: grid_world_19x10(False),
    "grid19x10-shaped": lambda: grid_world_19x10(True),
}
_RANDOM_RE = re.compile(r"^random-(\d+)x(\d+)(?:-s(\d+))?$")
RANDOM_PRESETS = ("random-10x5", "random-10x10", "random-50x5", "random-50x10",
                  "random-100x5", "random-100x10")


def list_domains() -> list[str]:
    return list(RANDOM_PRESETS) + list(_NAMED)


def get_domain(name: str) -> DomainSpec:
    """Look up a domain; ``random-SxA`` (optionally ``-sSEED``) builds a random MDP."""
    m = _RANDOM_RE.match(name)
    if m:
        S, A, seed = int(m.group(1)), int(m.group(2)), int(m.group(3) or 0)
        spec = random_domain(S, A, seed)
        return DomainSpec(name, spec.mdp, spec.true_reward, pool_seed=spec.pool_seed)
    try:
        return _NAMED[name]()
    except KeyError:
        raise KeyError(f"unknown domain {name!r}; known: {', '.join(list_domains())}") from None
