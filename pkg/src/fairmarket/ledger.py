"""Discounted multi-session utilities for destination members and source groups.

Values are stored at their last-update time and discounted lazily when read,
so an update costs O(1) regardless of population size.
"""
from __future__ import annotations

import csv
from typing import Iterable

import numpy as np

from .constraints import GroupUtilitySnapshot
from .errors import EmptyGroupError, TimeRegressionError, UnknownGroupError


class UtilityLedger:
    """Per-member destination utility and per-group cumulative source utility.

    Time is the simulator iteration index and ``rho`` the per-step discount.
    """

    def __init__(self, n_members: int, rho: float = 1.0, labels=None):
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"discount must lie in [0, 1], got {rho}")
        self.rho = float(rho)
        self.labels = None if labels is None else np.asarray(labels)
        self._dest = np.zeros(n_members)
        self._dest_t = np.zeros(n_members)
        self.dest_touched = np.zeros(n_members, dtype=bool)
        self.source_touched = np.zeros(n_members, dtype=bool)
        self._source: dict = {}

    @property
    def n_members(self) -> int:
        return len(self._dest)

    def _discount(self, dt):
        # rho ** 0 must be exactly 1, also for rho == 0
        return np.where(np.asarray(dt) == 0, 1.0, self.rho ** np.asarray(dt, dtype=float))

    def update_dest(self, d: int, increment: float, T: float) -> None:
        """``U(d)[T] = increment + rho^(T - t) U(d)[t]``."""
        t = self._dest_t[d]
        if T < t:
            raise TimeRegressionError(f"member {d} last updated at {t}, got time {T}")
        self._dest[d] = increment + float(self._discount(T - t)) * self._dest[d]
        self._dest_t[d] = T
        self.dest_touched[d] = True

    def update_dest_many(self, members: Iterable[int], increments: Iterable[float], T: float) -> None:
        for d, inc in zip(members, increments):
            self.update_dest(int(d), float(inc), T)

    def dest_value(self, d: int, T: float | None = None) -> float:
        if T is None:
            return float(self._dest[d])
        if T < self._dest_t[d]:
            raise TimeRegressionError(f"member {d} last updated at {self._dest_t[d]}, got time {T}")
        return float(self._discount(T - self._dest_t[d]) * self._dest[d])

    def dest_values(self, T: float) -> np.ndarray:
        """Every member's destination utility discounted to the common time ``T``."""
        if np.any(T < self._dest_t):
            raise TimeRegressionError(f"time {T} precedes a stored update")
        return self._discount(T - self._dest_t) * self._dest

    def group_mean_dest(self, group, T: float) -> float:
        """Average destination utility at time ``T`` over a group.

        ``group`` is a group id (needs ``labels``) or an explicit member list.
        """
        if np.ndim(group) == 0:
            if self.labels is None:
                raise UnknownGroupError(group)
            members = np.flatnonzero(self.labels == group)
        else:
            members = np.asarray(group, dtype=int)
        if members.size == 0:
            raise EmptyGroupError(f"group {group!r} is empty")
        return float(self.dest_values(T)[members].mean())

    def snapshot(self, T: float, groups=None) -> GroupUtilitySnapshot:
        if groups is None:
            if self.labels is None:
                raise ValueError("ledger has no group labels")
            groups = sorted(set(self.labels.tolist()))
        return GroupUtilitySnapshot({k: self.group_mean_dest(k, T) for k in groups}, T)

    def update_source(self, group, session_value: float, T: float, member: int | None = None) -> None:
        """``E[U(G, T)] = session_value + rho^(T - t) E[U(G, t)]``."""
        value, t = self._source.get(group, (0.0, T))
        if T < t:
            raise TimeRegressionError(f"group {group!r} last updated at {t}, got time {T}")
        self._source[group] = (session_value + float(self._discount(T - t)) * value, T)
        if member is not None:
            self.source_touched[member] = True

    def source_value(self, group, T: float | None = None) -> float:
        value, t = self._source.get(group, (0.0, 0.0 if T is None else T))
        if T is None:
            return float(value)
        if T < t:
            raise TimeRegressionError(f"group {group!r} last updated at {t}, got time {T}")
        return float(self._discount(T - t) * value)

    def source_accumulators(self, T: float) -> dict:
        return {g: self.source_value(g, T) for g in self._source}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["member", "group", "value", "last_update"])
            for d in range(self.n_members):
                group = "" if self.labels is None else self.labels[d].item()
                w.writerow([d, group, repr(float(self._dest[d])), repr(float(self._dest_t[d]))])
