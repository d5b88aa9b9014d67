"""Partially observed gridworlds with sparse success reward.

Cells: 0 empty, 1 wall, 2 goal, 3 key, 4 locked door, 5 open door.
Actions: 0 forward, 1 turn left, 2 turn right, 3 pick up, 4 drop, 5 toggle.
Directions: 0 east, 1 south, 2 west, 3 north.

Observation (155 floats): the 5x5 egocentric view (agent at the bottom
centre, facing up; cells outside the grid read as wall; no occlusion), each
cell one-hot over the 6 cell types, then a one-hot of the facing direction
and a carrying-key flag. Success pays ``1 - 0.9 * t / max_steps`` where ``t``
counts steps taken including the successful one; every other step pays 0.

Layouts (rows x cols, outer wall included):

* ``empty-random-5x5``: goal fixed at (3, 3), agent uniform over the other
  free cells with uniform heading. Max 100 steps.
* ``doorkey-5x5``: wall column 2 with a locked door in a random row; key and
  agent in the left strip; goal at (3, 3). Max 250 steps.
* ``fourrooms`` (13x13): walls on row 6 and column 6, one random gap in each
  of the four wall segments; agent and goal uniform over free cells. Max 676.
* ``unlock`` (13x13): two rooms split by column 6 with a locked door in a
  random row; key and agent in the left room. Opening the door is success.
  Max 676.
"""

from __future__ import annotations

import numpy as np

from .base import VecEnv

EMPTY, WALL, GOAL, KEY, DOOR_LOCKED, DOOR_OPEN = range(6)
N_TYPES = 6
VIEW = 5
DIRS = np.array([(0, 1), (1, 0), (0, -1), (-1, 0)])
OBS_DIM = VIEW * VIEW * N_TYPES + 4 + 1
PASSABLE = (EMPTY, GOAL, DOOR_OPEN)


class GridVecEnv(VecEnv):
    height = 5
    width = 5
    variant = "empty"

    def _init_storage(self):
        n = self.n_envs
        self.grid = np.zeros((n, self.height, self.width), dtype=np.int64)
        self.agent = np.zeros((n, 2), dtype=np.int64)
        self.direction = np.zeros(n, dtype=np.int64)
        self.carrying = np.zeros(n, dtype=np.int64)

    def _physical_state(self):
        return {"grid": self.grid, "agent": self.agent, "direction": self.direction,
                "carrying": self.carrying}

    def _load_physical_state(self, arrays):
        self.grid = arrays["grid"].astype(np.int64)
        self.agent = arrays["agent"].astype(np.int64)
        self.direction = arrays["direction"].astype(np.int64)
        self.carrying = arrays["carrying"].astype(np.int64)

    def _walled(self) -> np.ndarray:
        g = np.zeros((self.height, self.width), dtype=np.int64)
        g[0, :] = g[-1, :] = g[:, 0] = g[:, -1] = WALL
        return g

    def _place(self, i, g, cells, rng):
        self.grid[i] = g
        pick = cells[rng.integers(len(cells))]
        self.agent[i] = pick
        self.direction[i] = rng.integers(4)
        self.carrying[i] = 0

    def _reset_one(self, i):
        self._layout(i, self._walled(), self.rngs[i])

    def _layout(self, i, g, rng):
        raise NotImplementedError

    def _observe(self):
        n = self.n_envs
        obs = np.zeros((n, OBS_DIM))
        rows = np.arange(VIEW)[:, None]
        cols = np.arange(VIEW)[None, :]
        for i in range(n):
            f = DIRS[self.direction[i]]
            r = DIRS[(self.direction[i] + 1) % 4]
            ahead = (VIEW - 1) - rows
            side = cols - VIEW // 2
            wr = self.agent[i, 0] + f[0] * ahead + r[0] * side
            wc = self.agent[i, 1] + f[1] * ahead + r[1] * side
            inside = (wr >= 0) & (wr < self.height) & (wc >= 0) & (wc < self.width)
            cells = np.full((VIEW, VIEW), WALL, dtype=np.int64)
            cells[inside] = self.grid[i][wr[inside], wc[inside]]
            flat = cells.reshape(-1)
            obs[i, np.arange(VIEW * VIEW) * N_TYPES + flat] = 1.0
            obs[i, VIEW * VIEW * N_TYPES + self.direction[i]] = 1.0
            obs[i, -1] = float(self.carrying[i])
        return obs

    def _advance(self, actions):
        n = self.n_envs
        rewards = np.zeros(n)
        terminated = np.zeros(n, dtype=bool)
        for i in range(n):
            a = int(actions[i])
            d = self.direction[i]
            front = self.agent[i] + DIRS[d]
            fr, fc = int(front[0]), int(front[1])
            cell = self.grid[i, fr, fc]
            success = False
            if a == 0:
                if cell in PASSABLE:
                    self.agent[i] = (fr, fc)
                    success = cell == GOAL
            elif a == 1:
                self.direction[i] = (d - 1) % 4
            elif a == 2:
                self.direction[i] = (d + 1) % 4
            elif a == 3:
                if cell == KEY and not self.carrying[i]:
                    self.carrying[i] = 1
                    self.grid[i, fr, fc] = EMPTY
            elif a == 4:
                if cell == EMPTY and self.carrying[i]:
                    self.carrying[i] = 0
                    self.grid[i, fr, fc] = KEY
            elif a == 5:
                if cell == DOOR_LOCKED and self.carrying[i]:
                    self.grid[i, fr, fc] = DOOR_OPEN
                    success = self.variant == "unlock"
            if success:
                terminated[i] = True
                rewards[i] = 1.0 - 0.9 * (self.t[i] + 1) / self.spec.max_episode_steps
        return rewards, terminated


def _free(g, exclude=()):
    cells = [(r, c) for r in range(g.shape[0]) for c in range(g.shape[1]) if g[r, c] == EMPTY]
    return [p for p in cells if p not in exclude]


class EmptyRandom(GridVecEnv):
    variant = "empty"

    def _layout(self, i, g, rng):
        g[3, 3] = GOAL
        self._place(i, g, _free(g), rng)


class DoorKey(GridVecEnv):
    variant = "doorkey"

    def _layout(self, i, g, rng):
        g[:, 2] = WALL
        g[1 + rng.integers(3), 2] = DOOR_LOCKED
        g[3, 3] = GOAL
        left = [(r, 1) for r in range(1, 4)]
        key = left[rng.integers(len(left))]
        g[key] = KEY
        self._place(i, g, [p for p in left if p != key], rng)


class FourRooms(GridVecEnv):
    height = width = 13
    variant = "fourrooms"

    def _layout(self, i, g, rng):
        g[6, :] = WALL
        g[:, 6] = WALL
        g[1 + rng.integers(5), 6] = EMPTY
        g[7 + rng.integers(5), 6] = EMPTY
        g[6, 1 + rng.integers(5)] = EMPTY
        g[6, 7 + rng.integers(5)] = EMPTY
        free = _free(g)
        goal = free[rng.integers(len(free))]
        g[goal] = GOAL
        self._place(i, g, _free(g), rng)


class Unlock(GridVecEnv):
    height = width = 13
    variant = "unlock"

    def _layout(self, i, g, rng):
        g[:, 6] = WALL
        g[1 + rng.integers(11), 6] = DOOR_LOCKED
        left = [(r, c) for r in range(1, 12) for c in range(1, 6)]
        key = left[rng.integers(len(left))]
        g[key] = KEY
        self._place(i, g, [p for p in left if p != key], rng)
