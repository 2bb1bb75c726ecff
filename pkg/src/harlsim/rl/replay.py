"""FIFO experience memory shared by all vehicles a given agent controls."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np


class ReplayMemory:
    """Ring buffer of (s, a, r, s', done) tuples with fixed dimensions."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.states = np.zeros((capacity, state_dim), dtype=np.float32)
        self.actions = np.zeros((capacity, action_dim), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.next_states = np.zeros((capacity, state_dim), dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, a, r: float, s2, done: bool) -> None:
        s = np.asarray(s, dtype=np.float32).ravel()
        a = np.asarray(a, dtype=np.float32).ravel()
        s2 = np.asarray(s2, dtype=np.float32).ravel()
        if s.size != self.state_dim or s2.size != self.state_dim:
            raise ValueError(
                "state dim mismatch: got %d/%d, memory holds %d"
                % (s.size, s2.size, self.state_dim)
            )
        if a.size != self.action_dim:
            raise ValueError("action dim mismatch: got %d, memory holds %d" % (a.size, self.action_dim))
        i = self.ptr
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.dones[i] = 1.0 if done else 0.0
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        if self.size < batch_size:
            raise ValueError("memory holds %d < batch %d" % (self.size, batch_size))
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "s": self.states[idx].astype(np.float64),
            "a": self.actions[idx].astype(np.float64),
            "r": self.rewards[idx].astype(np.float64),
            "s2": self.next_states[idx].astype(np.float64),
            "done": self.dones[idx].astype(np.float64),
        }
