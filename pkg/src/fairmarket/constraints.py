"""Coefficient vectors for destination- and source-side fairness constraints.

Every exposure constraint has the form ``|f^T P v - target| <= tolerance`` with
one coefficient per candidate.  Builders work on the candidate subset of a
population; ``candidates`` indexes into the group labels.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateUtilityError, EmptyGroupError, TimeRegressionError, UnknownGroupError
from .model import GroupAssignment, position_biases

DEFAULT_DYNAMIC_TOLERANCE = 0.1


class ConstraintKind(str, enum.Enum):
    DP = "DP"
    DT = "DT"
    DI = "DI"
    DYNAMIC = "Dynamic"
    SOURCE_TARGET = "SourceTarget"

    @property
    def is_exposure(self) -> bool:
        return self in (ConstraintKind.DP, ConstraintKind.DT, ConstraintKind.DI)


@dataclass(frozen=True)
class ConstraintVector:
    f: np.ndarray
    target: float = 0.0
    tolerance: float = 0.0
    kind: ConstraintKind = ConstraintKind.DP
    groups: tuple = field(default=(), compare=False)

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ValueError("constraint coefficients must be a finite 1-d vector")
        if not (self.tolerance >= 0):
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "kind", ConstraintKind(self.kind))

    def with_tolerance(self, tolerance: float) -> ConstraintVector:
        return ConstraintVector(self.f, self.target, tolerance, self.kind, self.groups)

    def value(self, P, v) -> float:
        """``f^T P v`` for a policy matrix ``P``."""
        return float(self.f @ np.asarray(P, dtype=float) @ np.asarray(v, dtype=float))

    def violation(self, P, v) -> float:
        return max(0.0, abs(self.value(P, v) - self.target) - self.tolerance)


@dataclass(frozen=True)
class GroupUtilitySnapshot:
    """Average cumulative destination utility per group, taken at time ``t``."""

    mu: Mapping
    t: float = 0.0


def _labels(groups) -> np.ndarray:
    if isinstance(groups, GroupAssignment):
        return groups.labels
    return np.asarray(groups)


def _candidate_labels(groups, candidates) -> np.ndarray:
    labels = _labels(groups)
    if candidates is None:
        return labels
    return labels[np.asarray(candidates, dtype=int)]


def _indicators(lab: np.ndarray, k, kp) -> tuple[np.ndarray, np.ndarray]:
    in_k = (lab == k).astype(float)
    in_kp = (lab == kp).astype(float)
    for g, ind in ((k, in_k), (kp, in_kp)):
        if ind.sum() == 0:
            raise EmptyGroupError(f"group {g!r} has no members among the candidates")
    return in_k, in_kp


def build_dp_vector(groups, k, kp, candidates=None, sizes=None) -> ConstraintVector:
    """Demographic parity: equal average exposure of groups ``k`` and ``kp``.

    ``sizes`` overrides the per-group normalizers (default: the number of
    candidates in each group).
    """
    lab = _candidate_labels(groups, candidates)
    in_k, in_kp = _indicators(lab, k, kp)
    n_k, n_kp = sizes if sizes is not None else (in_k.sum(), in_kp.sum())
    return ConstraintVector(in_k / n_k - in_kp / n_kp, 0.0, 0.0, ConstraintKind.DP, (k, kp))


def _group_means(u: np.ndarray, in_k: np.ndarray, in_kp: np.ndarray) -> tuple[float, float]:
    mean_k = float(u @ in_k / in_k.sum())
    mean_kp = float(u @ in_kp / in_kp.sum())
    if not (mean_k > 0 and mean_kp > 0):
        raise DegenerateUtilityError(
            f"group mean utilities must be positive, got {mean_k} and {mean_kp}")
    return mean_k, mean_kp


def _check_u(u, lab) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != lab.shape:
        raise ValueError(f"need one utility per candidate ({lab.shape[0]}), got {u.shape[0]}")
    return u


def build_dt_vector(groups, k, kp, u, candidates=None) -> ConstraintVector:
    """Disparate treatment: exposure proportional to group mean utility."""
    lab = _candidate_labels(groups, candidates)
    u = _check_u(u, lab)
    in_k, in_kp = _indicators(lab, k, kp)
    mean_k, mean_kp = _group_means(u, in_k, in_kp)
    f = in_k / (in_k.sum() * mean_k) - in_kp / (in_kp.sum() * mean_kp)
    return ConstraintVector(f, 0.0, 0.0, ConstraintKind.DT, (k, kp))


def build_di_vector(groups, k, kp, u, candidates=None) -> ConstraintVector:
    """Disparate impact: utility-weighted exposure proportional to group mean utility."""
    lab = _candidate_labels(groups, candidates)
    u = _check_u(u, lab)
    in_k, in_kp = _indicators(lab, k, kp)
    mean_k, mean_kp = _group_means(u, in_k, in_kp)
    f = u * in_k / (in_k.sum() * mean_k) - u * in_kp / (in_kp.sum() * mean_kp)
    return ConstraintVector(f, 0.0, 0.0, ConstraintKind.DI, (k, kp))


def build_dynamic_constraint(groups, k, kp, u, snapshot: GroupUtilitySnapshot, rho: float,
                             T: float, candidates=None,
                             tolerance: float = DEFAULT_DYNAMIC_TOLERANCE) -> ConstraintVector:
    """Equal increments of average discounted destination utility across two groups.

    Group sizes are population sizes (the averages in ``snapshot`` are taken
    over whole groups); coefficients are emitted for the candidates only.
    """
    if T < snapshot.t:
        raise TimeRegressionError(f"snapshot taken at {snapshot.t}, now is {T}")
    for g in (k, kp):
        if g not in snapshot.mu:
            raise UnknownGroupError(g)
    labels = _labels(groups)
    n_k = int(np.count_nonzero(labels == k))
    n_kp = int(np.count_nonzero(labels == kp))
    if n_k == 0 or n_kp == 0:
        raise UnknownGroupError(k if n_k == 0 else kp)
    lab = _candidate_labels(groups, candidates)
    u = _check_u(u, lab)
    f = u * ((lab == k) / n_k - (lab == kp) / n_kp)
    target = (1.0 - rho ** (T - snapshot.t)) * (snapshot.mu[k] - snapshot.mu[kp])
    return ConstraintVector(f, float(target), tolerance, ConstraintKind.DYNAMIC, (k, kp))


def equality_of_opportunity_epsilon(m: int, v: Sequence[float] | None = None) -> float:
    """Mean exposure over odd slots minus mean exposure over even slots of ``1..m``."""
    if m < 2:
        raise ValueError(f"need at least two slots to have an even index, got {m}")
    v = position_biases(m) if v is None else np.asarray(v, dtype=float)[:m]
    return float(v[0::2].mean() - v[1::2].mean())


def build_source_target(source_acc: Mapping, k, kp, rho: float, delta: float) -> float:
    """Target source utility for a querying member of group ``k`` relative to group ``kp``."""
    for g in (k, kp):
        if g not in source_acc:
            raise UnknownGroupError(g)
    return float(source_acc[kp] - rho ** delta * source_acc[k])


def pairwise(builder: Callable[..., ConstraintVector], group_ids: Sequence, *args,
             **kwargs) -> list[ConstraintVector]:
    """One constraint per unordered group pair ``k < kp``."""
    return [builder(args[0], k, kp, *args[1:], **kwargs)
            for k, kp in itertools.combinations(sorted(group_ids), 2)]
