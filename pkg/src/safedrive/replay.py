"""Replay storage for the safe and collision buffers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAFE = "safe"
COLLISION = "collision"


@dataclass(frozen=True)
class Transition:
    """One replay record; states are in network (normalised) scale.

    ``s_next`` is ``None`` for handcrafted-violation and collision records,
    which only ever live in the collision buffer.
    """

    s: np.ndarray
    a: int
    s_next: np.ndarray | None
    r: float
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring backed by preallocated arrays."""

    def __init__(self, capacity: int, tag: str, state_dim: int = 20):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if tag not in (SAFE, COLLISION):
            raise ValueError(f"unknown buffer tag {tag!r}")
        self.capacity = capacity
        self.tag = tag
        self.s = np.zeros((capacity, state_dim))
        self.s_next = np.zeros((capacity, state_dim))
        self.has_next = np.zeros(capacity, dtype=bool)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0
        self.pushed = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        if t.s_next is None and self.tag == SAFE:
            raise ValueError("safe-buffer transitions need s_next")
        i = self._next
        self.s[i] = t.s
        self.a[i] = t.a
        self.r[i] = t.r
        self.terminal[i] = t.terminal
        self.has_next[i] = t.s_next is not None
        self.s_next[i] = t.s_next if t.s_next is not None else 0.0
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.pushed += 1

    def _slot(self, k: int) -> int:
        # k-th oldest record
        if not 0 <= k < self._size:
            raise IndexError(k)
        start = self._next - self._size
        return (start + k) % self.capacity

    def __getitem__(self, k: int) -> Transition:
        i = self._slot(k)
        return Transition(
            s=self.s[i].copy(),
            a=int(self.a[i]),
            s_next=self.s_next[i].copy() if self.has_next[i] else None,
            r=float(self.r[i]),
            terminal=bool(self.terminal[i]),
        )

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # ring slots are all valid once filled; before that only [0, size)
        return rng.integers(0, self._size, size=n)


@dataclass(frozen=True)
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    from_collision: np.ndarray
    collision_fallback: bool = False

    def __len__(self) -> int:
        return len(self.a)


def sample_minibatch(
    safe: ReplayBuffer, collision: ReplayBuffer, n: int, rng: np.random.Generator
) -> Batch:
    """Half the batch from each buffer, with replacement.

    When the collision buffer is still empty the whole batch comes from the
    safe buffer and ``collision_fallback`` is set.
    """
    if n <= 0 or n % 2:
        raise ValueError("batch size must be positive and even")
    if len(safe) == 0 and len(collision) == 0:
        raise ValueError("cannot sample from two empty buffers")
    if len(safe) == 0:
        raise ValueError("the safe buffer must not be empty")
    fallback = len(collision) == 0
    n_safe = n if fallback else n // 2
    i_safe = safe.sample_indices(n_safe, rng)
    parts = [(safe, i_safe)]
    if not fallback:
        parts.append((collision, collision.sample_indices(n - n_safe, rng)))
    s = np.concatenate([b.s[i] for b, i in parts])
    a = np.concatenate([b.a[i] for b, i in parts])
    r = np.concatenate([b.r[i] for b, i in parts])
    s_next = np.concatenate([b.s_next[i] for b, i in parts])
    from_collision = np.concatenate([np.full(len(i), b.tag == COLLISION) for b, i in parts])
    return Batch(s, a, r, s_next, from_collision, fallback)
