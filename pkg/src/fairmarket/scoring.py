"""Online serving path: dual-to-primal scoring, simplex projection, greedy slots."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidSlotError, NotInitializedError, ShapeError
from .model import SlotAssignment


def project_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean projection of every row of ``X`` onto ``{y >= 0, sum(y) <= 1}``.

    Returns the projected rows and a boolean per row telling whether the
    ``sum(y) <= 1`` face is active (needed for the projection Jacobian).
    """
    X = np.asarray(X, dtype=float)
    Y = np.maximum(X, 0.0)
    capped = Y.sum(axis=1) > 1.0
    if np.any(capped):
        Xc = X[capped]
        m = Xc.shape[1]
        s = -np.sort(-Xc, axis=1)
        css = np.cumsum(s, axis=1) - 1.0
        ks = np.arange(1, m + 1)
        cond = s - css / ks > 0
        rho = m - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = css[np.arange(len(rho)), rho] / (rho + 1)
        Y[capped] = np.maximum(Xc - theta[:, None], 0.0)
    return Y, capped


def project_simplex(x: Sequence[float]) -> np.ndarray:
    """Project ``x`` onto the substochastic simplex ``T_m = {y >= 0, sum(y) <= 1}``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("project_simplex expects a vector")
    return project_rows(x[None, :])[0][0]


@dataclass(frozen=True)
class DualVariables:
    """Slot duals ``eta`` plus one signed dual per fairness constraint.

    ``kinds`` names each entry of ``lam`` (constraint kind values, e.g. "DP").
    ``uv_weight`` multiplies the utility term; it is 1 except for source-fair
    solves, where it absorbs the duals of the utility-gap penalties.
    """

    eta: np.ndarray
    lam: np.ndarray
    kinds: tuple = ()
    uv_weight: float = 1.0

    def __post_init__(self):
        for name in ("eta", "lam"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if len(self.kinds) not in (0, len(self.lam)):
            raise ShapeError("one kind per fairness dual")

    def _first(self, exposure: bool) -> float:
        from .constraints import ConstraintKind
        for kind, val in zip(self.kinds, self.lam):
            if ConstraintKind(kind).is_exposure == exposure:
                return float(val)
        return 0.0

    @property
    def lambda1(self) -> float:
        """Dual of the (first) exposure-fairness constraint."""
        return self._first(True)

    @property
    def lambda2(self) -> float:
        """Dual of the (first) dynamic constraint."""
        return self._first(False)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.eta)) and np.all(np.isfinite(self.lam)))


@dataclass(frozen=True)
class DualStore:
    duals: DualVariables
    gamma: float
    refreshed_at: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.duals.is_finite():
            raise ValueError("duals must be finite")


def dual_to_primal(uv: np.ndarray, fairness_terms: Sequence[np.ndarray], store: DualStore) -> np.ndarray:
    """Closed-form policy rows ``Pi_T((w * uv - sum_c lam_c * term_c - eta) / gamma)``.

    ``uv`` and every fairness term are ``(M, m)`` (or ``(m,)`` for one
    candidate); term ``c`` pairs with ``store.duals.lam[c]``.
    """
    uv = np.asarray(uv, dtype=float)
    single = uv.ndim == 1
    uv = np.atleast_2d(uv)
    lam = store.duals.lam
    if len(fairness_terms) != len(lam):
        raise ShapeError(f"{len(fairness_terms)} fairness terms for {len(lam)} duals")
    x = store.duals.uv_weight * uv - store.duals.eta[None, :]
    for lam_c, term in zip(lam, fairness_terms):
        if lam_c != 0.0:
            x = x - lam_c * np.atleast_2d(term)
    P_hat, _ = project_rows(x / store.gamma)
    return P_hat[0] if single else P_hat


def greedy_assign(P_hat: np.ndarray) -> SlotAssignment:
    """For slots in order, take the not-yet-assigned row with the largest entry.

    Ties go to the lowest candidate index.
    """
    P_hat = np.asarray(P_hat, dtype=float)
    M, m = P_hat.shape
    if M < m:
        raise InvalidSlotError(f"{M} candidates cannot fill {m} slots")
    taken = np.zeros(M, dtype=bool)
    chosen = []
    for r in range(m):
        col = np.where(taken, -np.inf, P_hat[:, r])
        d = int(np.argmax(col))
        taken[d] = True
        chosen.append(d)
    return SlotAssignment(tuple(chosen))


def fairness_terms(constraints: Sequence, v: np.ndarray) -> list[np.ndarray]:
    """Per-candidate slot coefficients ``f_d * v_r`` for each constraint."""
    v = np.asarray(v, dtype=float)
    return [np.outer(c.f, v) for c in constraints]


def score_session(u: Sequence[float], v: Sequence[float], constraints: Sequence,
                  store: DualStore | None) -> SlotAssignment:
    """Rank one session's candidates from cached duals.

    ``constraints`` are rebuilt for the current candidates and must line up
    with the duals in ``store``.
    """
    if store is None:
        raise NotInitializedError("no duals have been computed yet")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    P_hat = dual_to_primal(np.outer(u, v), fairness_terms(constraints, v), store)
    return greedy_assign(P_hat)
