"""Core marketplace types and the expected-utility algebra.

A ranking policy for one source member is an ``M x m`` matrix ``P`` whose
entry ``P[d, r]`` is the probability of showing candidate ``d`` in slot ``r``.
Slot ``r`` carries an exposure weight ``v[r]`` (the position bias).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyGroupError, InvalidSlotError, ShapeError

# Base of the logarithm in posBias(k) = 1 / (1 + log k).
POSITION_BIAS_LOG_BASE = math.e

_FEAS_TOL = 1e-9


def position_bias(k: int) -> float:
    """Exposure weight of the 1-based slot ``k``."""
    if k < 1:
        raise InvalidSlotError(f"slot index must be >= 1, got {k}")
    return 1.0 / (1.0 + math.log(k, POSITION_BIAS_LOG_BASE))


def position_biases(m: int) -> np.ndarray:
    """Vector ``v`` of exposure weights for slots ``1..m``."""
    if m < 1:
        raise InvalidSlotError(f"need at least one slot, got {m}")
    k = np.arange(1, m + 1, dtype=float)
    return 1.0 / (1.0 + np.log(k) / math.log(POSITION_BIAS_LOG_BASE))


@dataclass(frozen=True)
class GroupAssignment:
    """Disjoint group labels, one per member (member id == array index)."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ShapeError("labels must be one-dimensional")
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n_members(self) -> int:
        return len(self.labels)

    @property
    def group_ids(self) -> list:
        return sorted(set(self.labels.tolist()))

    def members(self, k) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def size(self, k) -> int:
        return int(np.count_nonzero(self.labels == k))

    @property
    def groups(self) -> dict:
        return {k: self.members(k) for k in self.group_ids}

    def require_nonempty(self, *ks) -> None:
        for k in ks:
            if self.size(k) == 0:
                raise EmptyGroupError(f"group {k!r} has no members")


@dataclass(frozen=True)
class RankingPolicy:
    """Showing probabilities ``P`` (M x m) with the candidate-major vectorization ``p``."""

    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2:
            raise ShapeError("P must be a 2-d matrix")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @classmethod
    def from_vector(cls, p: np.ndarray, M: int, m: int) -> RankingPolicy:
        p = np.asarray(p, dtype=float)
        if p.shape != (M * m,):
            raise ShapeError(f"expected vector of length {M * m}, got {p.shape}")
        return cls(p.reshape(M, m))

    @property
    def p(self) -> np.ndarray:
        return self.P.reshape(-1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.P.shape

    def is_valid(self, tol: float = _FEAS_TOL) -> bool:
        P = self.P
        return bool(
            np.all(P >= -tol)
            and np.all(P <= 1 + tol)
            and np.allclose(P.sum(axis=0), 1.0, atol=tol, rtol=0)
            and np.all(P.sum(axis=1) <= 1 + tol)
        )


@dataclass(frozen=True)
class SlotAssignment:
    """Deterministic ranking: ``member_at_slot[r]`` is shown in slot ``r + 1``."""

    member_at_slot: tuple

    def __post_init__(self):
        slots = tuple(int(d) for d in self.member_at_slot)
        if len(set(slots)) != len(slots):
            raise ValueError("slot assignment repeats a member")
        object.__setattr__(self, "member_at_slot", slots)

    def __len__(self) -> int:
        return len(self.member_at_slot)

    def __iter__(self):
        return iter(self.member_at_slot)

    def as_matrix(self, M: int) -> np.ndarray:
        """0/1 policy matrix with a single 1 per slot column."""
        P = np.zeros((M, len(self.member_at_slot)))
        P[list(self.member_at_slot), np.arange(len(self.member_at_slot))] = 1.0
        return P


def _as_P(P) -> np.ndarray:
    return P.P if isinstance(P, RankingPolicy) else np.asarray(P, dtype=float)


def expected_source_utility(u: Sequence[float], P, v: Sequence[float]) -> float:
    """``u^T P v``: score-weighted exposure collected by the source member."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    P = _as_P(P)
    if P.ndim != 2 or P.shape != (u.shape[0], v.shape[0]):
        raise ShapeError(f"P has shape {P.shape}, expected ({u.shape[0]}, {v.shape[0]})")
    return float(u @ P @ v)


def expected_dest_utility(u_sd: float, P_row: Sequence[float], v: Sequence[float]) -> float:
    """Utility a destination member gets from one session: ``u_sd * (P_row . v)``."""
    P_row = np.asarray(P_row, dtype=float)
    v = np.asarray(v, dtype=float)
    if P_row.shape != v.shape:
        raise ShapeError(f"row of length {P_row.shape} does not match {v.shape} slots")
    return float(u_sd) * float(P_row @ v)


def check_slots_fit(M: int, m: int) -> None:
    if m < 1:
        raise InvalidSlotError("need at least one slot")
    if m > M:
        raise InvalidSlotError(f"cannot fill {m} slots with {M} distinct candidates")


__all__ = [
    "POSITION_BIAS_LOG_BASE",
    "EmptyGroupError",
    "GroupAssignment",
    "RankingPolicy",
    "SlotAssignment",
    "check_slots_fit",
    "expected_dest_utility",
    "expected_source_utility",
    "position_bias",
    "position_biases",
]
