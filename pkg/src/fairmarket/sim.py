"""Member-to-member marketplace simulator.

A stochastic block model seeds the connection graph; each iteration picks a
source member, scores every other member from graph and covariate affinity,
draws a ranked candidate list of ``D`` members from the normalized scores,
lets a policy choose ``m`` of them, and creates connections with a
position-dependent click probability.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import constraints as fc
from .errors import ConfigError, EmptyGroupError
from .ledger import UtilityLedger
from .model import GroupAssignment, SlotAssignment, position_biases
from .scoring import DualStore, DualVariables, dual_to_primal, fairness_terms, greedy_assign
from .solver import DEFAULT_GAMMA, SolverOptions, Status, assemble, solve

log = logging.getLogger(__name__)

POLICIES = ("noReranker", "primal", "dualNoDynamic", "dualWithDynamic")


@dataclass(frozen=True)
class SimConfig:
    n_members: int = 1000
    n_iterations: int = 1000
    m_slots: int = 10
    d_eligible: int = 250
    p0_group_fraction: float = 0.65
    d_cov: int = 30
    sigma2: float = 0.1
    p00: float = 0.05
    p11: float = 0.04
    p01: float = 0.01
    p_base: float = 0.1
    score_ratio_target: float = 0.9
    graph_weight: float = 1.0                 # relative weights inside the score exponent
    member_weight: float = 0.0
    affinity_scale: str = "raw"               # "raw" or "sd" (each affinity divided by its session sd)
    ranking: str = "sample"                   # "sample": Plackett-Luce draw; "top": sort by score
    policy: str = "noReranker"
    dual_refresh_epochs: int = 50
    gamma: float = DEFAULT_GAMMA
    rho: float = 1.0
    exposure_tolerance: float | None = None   # None: equality-of-opportunity epsilon(m)
    dynamic_tolerance: float = fc.DEFAULT_DYNAMIC_TOLERANCE
    exposure_normalization: str = "slots"     # "slots" (m / 2 per group) or "candidates"
    source_utility: str = "top_scores"        # "top_scores" or "shown"
    dest_increment: str = "realized"          # "realized" or "fractional"
    lp_utility_scale: str = "max"             # "max": LP sees u / max(u); "raw": normalized scores as-is
    primal_iterations: int | None = 100       # iteration budget for the primal policy
    seed: int = 0
    replicate: int = 0

    def validate(self) -> SimConfig:
        for name in ("p0_group_fraction", "p00", "p11", "p01", "p_base"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(name, f"probability must lie in [0, 1], got {value}")
        if not 0.0 < self.score_ratio_target < 1.0:
            raise ConfigError("score_ratio_target", "must lie in (0, 1)")
        if self.n_members < 3:
            raise ConfigError("n_members", "need at least 3 members")
        if not 1 <= self.m_slots <= self.d_eligible <= self.n_members - 1:
            raise ConfigError("d_eligible", "need 1 <= m_slots <= d_eligible <= n_members - 1")
        if self.n_iterations < 0:
            raise ConfigError("n_iterations", "must be >= 0")
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"unknown policy {self.policy!r}; choose from {POLICIES}")
        if self.dual_refresh_epochs < 1:
            raise ConfigError("dual_refresh_epochs", "must be >= 1")
        if not self.gamma > 0:
            raise ConfigError("gamma", "must be > 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho", "must lie in [0, 1]")
        if self.exposure_tolerance is not None and not self.exposure_tolerance >= 0:
            raise ConfigError("exposure_tolerance", "must be >= 0")
        if not self.dynamic_tolerance >= 0:
            raise ConfigError("dynamic_tolerance", "must be >= 0")
        if self.graph_weight < 0 or self.member_weight < 0 or self.graph_weight + self.member_weight == 0:
            raise ConfigError("member_weight", "affinity weights must be >= 0 and not both zero")
        if self.sigma2 < 0 or self.d_cov < 1:
            raise ConfigError("sigma2", "covariate variance must be >= 0 and d_cov >= 1")
        for name, allowed in (("exposure_normalization", ("slots", "candidates")),
                              ("source_utility", ("top_scores", "shown")),
                              ("dest_increment", ("realized", "fractional")),
                              ("lp_utility_scale", ("max", "raw")),
                              ("affinity_scale", ("raw", "sd")),
                              ("ranking", ("sample", "top"))):
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"must be one of {allowed}")
        if self.policy == "primal" and self.primal_iterations is not None and self.primal_iterations < 0:
            raise ConfigError("primal_iterations", "must be >= 0")
        return self

    @property
    def iterations_for_policy(self) -> int:
        if self.policy == "primal" and self.primal_iterations is not None:
            return min(self.n_iterations, self.primal_iterations)
        return self.n_iterations

    @property
    def epsilon(self) -> float:
        if self.exposure_tolerance is not None:
            return self.exposure_tolerance
        return fc.equality_of_opportunity_epsilon(self.m_slots) if self.m_slots >= 2 else 0.0

    def replace(self, **changes) -> SimConfig:
        return dataclasses.replace(self, **changes)


@dataclass
class RngStreams:
    graph: np.random.Generator
    pick: np.random.Generator
    click: np.random.Generator
    rank: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, replicate: int = 0) -> RngStreams:
        root = np.random.SeedSequence(entropy=seed, spawn_key=(replicate,))
        graph_ss, loop_ss = root.spawn(2)
        pick_ss, click_ss, rank_ss = loop_ss.spawn(3)
        return cls(*(np.random.default_rng(ss) for ss in (graph_ss, pick_ss, click_ss, rank_ss)))


@dataclass
class SimState:
    config: SimConfig
    adjacency: np.ndarray          # float32 0/1, symmetric, zero diagonal
    covariates: np.ndarray
    groups: GroupAssignment
    ledger: UtilityLedger
    rng: RngStreams
    distances: np.ndarray
    dual_store: DualStore | None = None
    refresh_pending: bool = True
    iteration: int = 0
    session_log: list = field(default_factory=list)
    # counters: sessions with a group absent from the candidates ("one_group"),
    # tolerance widenings, and solves still infeasible after widening
    flags: dict = field(default_factory=lambda: {"degenerate_scores": 0, "one_group": 0, "widened": 0,
                                                  "infeasible_refresh": 0, "primal_fallback": 0})

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def reset_loop_rng(self) -> None:
        """Re-seed the iteration streams so every policy sees the same queries."""
        fresh = RngStreams.from_seed(self.config.seed, self.config.replicate)
        self.rng.pick, self.rng.click, self.rng.rank = fresh.pick, fresh.click, fresh.rank


def init_graph(config: SimConfig, seed: int | None = None) -> SimState:
    """Two-block stochastic block model with Gaussian group covariates."""
    config.validate()
    if seed is not None:
        config = config.replace(seed=seed)
    rng = RngStreams.from_seed(config.seed, config.replicate)
    g = rng.graph
    n = config.n_members
    labels = np.where(g.random(n) < config.p0_group_fraction, 0, 1)
    means = g.standard_normal((2, config.d_cov))
    X = means[labels] + math.sqrt(config.sigma2) * g.standard_normal((n, config.d_cov))
    probs = np.array([[config.p00, config.p01], [config.p01, config.p11]])
    edge_p = probs[labels[:, None], labels[None, :]]
    upper = np.triu(g.random((n, n)) < edge_p, k=1)
    A = (upper | upper.T).astype(np.float32)
    sq = np.sum(X ** 2, axis=1)
    dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0))
    np.fill_diagonal(dist, 0.0)
    return SimState(config=config, adjacency=A, covariates=X, groups=GroupAssignment(labels),
                    ledger=UtilityLedger(n, config.rho, labels), rng=rng, distances=dist)


def affinities(state: SimState, i: int, j: int) -> tuple[float, float]:
    """``(member affinity, graph affinity)`` = (-|X_i - X_j|, common neighbours)."""
    if i == j:
        raise ValueError("affinity is defined between distinct members")
    member = -float(np.linalg.norm(state.covariates[i] - state.covariates[j]))
    graph = float(state.adjacency[i] @ state.adjacency[:, j])
    return member, graph


def tuned_scores(exponent: np.ndarray, ratio: float) -> tuple[np.ndarray, bool]:
    """Normalized ``exp(tau * exponent)`` with ``tau`` set so the top two scores have ``ratio``.

    Returns ``(scores, degenerate)``; ``degenerate`` means every exponent is
    equal and the scores fall back to uniform.
    """
    top = float(np.max(exponent))
    lower = exponent[exponent < top]
    if lower.size == 0:
        return np.full(exponent.shape, 1.0 / exponent.size), True
    gap = top - float(np.max(lower))
    tau = -math.log(ratio) / gap
    w = np.exp(tau * (exponent - top))
    return w / w.sum(), False


def session_exponent(state: SimState, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Combined affinity exponent for every ``j != i``; returns ``(others, exponent)``."""
    n = state.config.n_members
    others = np.delete(np.arange(n), i)
    graph = (state.adjacency[i] @ state.adjacency).astype(float)[others]
    member = -state.distances[i, others]
    cfg = state.config
    exponent = np.zeros(n - 1)
    for aff, weight in ((graph, cfg.graph_weight), (member, cfg.member_weight)):
        if weight == 0:
            continue
        sd = float(np.std(aff)) if cfg.affinity_scale == "sd" else 1.0
        if sd > 0:
            exponent += weight * aff / sd
    return others, exponent


def model_scores(state: SimState, i: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Normalized scores over all members ``j != i``: ``(others, scores, degenerate)``."""
    others, exponent = session_exponent(state, i)
    scores, degenerate = tuned_scores(exponent, state.config.score_ratio_target)
    return others, scores, degenerate


def _top(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores; ties favour the lower index."""
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:k]


def draw_ranking(scores: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Plackett-Luce draw of ``k`` indices: sequential sampling without
    replacement proportional to ``scores`` (Gumbel top-k)."""
    with np.errstate(divide="ignore"):
        keys = np.log(scores) + rng.gumbel(size=scores.size)
    return _top(keys, k)


def rank_candidates(state: SimState, scores: np.ndarray) -> np.ndarray:
    cfg = state.config
    if cfg.ranking == "sample":
        return draw_ranking(scores, cfg.d_eligible, state.rng.rank)
    return _top(scores, cfg.d_eligible)


class _Session:
    """Everything a policy needs about the current query."""

    def __init__(self, state: SimState, source: int, candidates: np.ndarray, u: np.ndarray):
        self.state = state
        self.source = source
        self.candidates = candidates
        self.u = u
        # LP utilities; rescaling keeps gamma small relative to the objective
        self.scale = float(u.max()) if state.config.lp_utility_scale == "max" and u.max() > 0 else 1.0
        self.u_lp = u / self.scale
        self.labels = state.groups.labels[candidates]
        self.v = position_biases(state.config.m_slots)

    def exposure_constraint(self, tolerance: float) -> fc.ConstraintVector:
        cfg = self.state.config
        sizes = None
        if cfg.exposure_normalization == "slots":
            sizes = (cfg.m_slots / 2.0, cfg.m_slots / 2.0)
        return fc.build_dp_vector(self.labels, 0, 1, sizes=sizes).with_tolerance(tolerance)

    def dynamic_constraint(self) -> fc.ConstraintVector:
        cfg = self.state.config
        T = self.state.iteration
        t = max(T - 1, 0)
        snap = self.state.ledger.snapshot(t, groups=(0, 1))
        snap = fc.GroupUtilitySnapshot({k: mu / self.scale for k, mu in snap.mu.items()}, snap.t)
        return fc.build_dynamic_constraint(self.state.groups.labels, 0, 1, self.u_lp, snap, cfg.rho, T,
                                           candidates=self.candidates,
                                           tolerance=cfg.dynamic_tolerance)

    def constraints(self, dynamic: bool, tolerance: float) -> list[fc.ConstraintVector]:
        cs = [self.exposure_constraint(tolerance)]
        if dynamic:
            cs.append(self.dynamic_constraint())
        return cs

    def zero_constraints(self, dynamic: bool) -> list[fc.ConstraintVector]:
        M = len(self.candidates)
        kinds = [fc.ConstraintKind.DP] + ([fc.ConstraintKind.DYNAMIC] if dynamic else [])
        return [fc.ConstraintVector(np.zeros(M), 0.0, 0.0, k) for k in kinds]


def _solve_with_retry(session: _Session, dynamic: bool, state: SimState, y0=None):
    """Solve the session LP; on infeasibility widen the tolerances by 2x once.

    Returns ``(solution, constraints)`` or ``(None, constraints)``.
    """
    cfg = state.config
    try:
        cs = session.constraints(dynamic, cfg.epsilon)
    except EmptyGroupError:
        state.flags["one_group"] += 1
        return None, None
    opts = SolverOptions(y0=y0)
    for attempt in range(2):
        problem = assemble(session.u_lp, session.v, cs, gamma=cfg.gamma)
        if y0 is not None and len(y0) != problem.n_rows:
            opts = SolverOptions()
        sol = solve(problem, opts)
        if sol.status is Status.OPTIMAL:
            return sol, cs
        if attempt == 0:
            state.flags["widened"] += 1
            cs = [c.with_tolerance(2.0 * c.tolerance) if c.tolerance > 0 else c.with_tolerance(1e-3)
                  for c in cs]
    return None, cs


def _policy_primal(state: SimState, session: _Session):
    sol, cs = _solve_with_retry(session, dynamic=False, state=state)
    if sol is None:
        if cs is not None:
            state.flags["primal_fallback"] += 1
        sol = solve(assemble(session.u_lp, session.v, (), gamma=state.config.gamma))
    return greedy_assign(sol.P), sol.P


def _policy_dual(state: SimState, session: _Session, dynamic: bool):
    cfg = state.config
    if state.refresh_pending or state.iteration % cfg.dual_refresh_epochs == 0:
        sol, cs = _solve_with_retry(session, dynamic, state)
        if sol is not None:
            state.dual_store = DualStore(sol.duals, cfg.gamma, state.iteration)
            state.refresh_pending = False
        else:
            # keep serving the cached duals and try again on the next session
            if cs is not None:
                state.flags["infeasible_refresh"] += 1
            state.refresh_pending = True
            if state.dual_store is None:
                kinds = [fc.ConstraintKind.DP] + ([fc.ConstraintKind.DYNAMIC] if dynamic else [])
                base = solve(assemble(session.u_lp, session.v, (), gamma=cfg.gamma))
                duals = DualVariables(base.duals.eta, np.zeros(len(kinds)), tuple(k.value for k in kinds))
                state.dual_store = DualStore(duals, cfg.gamma, state.iteration)
    try:
        cs = session.constraints(dynamic, cfg.epsilon)
    except EmptyGroupError:
        cs = session.zero_constraints(dynamic)
    P_hat = dual_to_primal(np.outer(session.u_lp, session.v), fairness_terms(cs, session.v),
                           state.dual_store)
    return greedy_assign(P_hat), P_hat


def choose_slots(state: SimState, session: _Session):
    """Dispatch to the configured policy: ``(SlotAssignment over candidates, P or None)``."""
    policy = state.config.policy
    m = state.config.m_slots
    if policy == "noReranker":
        return SlotAssignment(tuple(range(m))), None
    if policy == "primal":
        return _policy_primal(state, session)
    return _policy_dual(state, session, dynamic=(policy == "dualWithDynamic"))


def run_iteration(state: SimState) -> dict:
    """Advance the simulation by one query and return its session record."""
    cfg = state.config
    T = state.iteration
    n = cfg.n_members
    m = cfg.m_slots
    source = int(state.rng.pick.integers(n))
    others, scores, degenerate = model_scores(state, source)
    if degenerate:
        state.flags["degenerate_scores"] += 1
    top = rank_candidates(state, scores)
    candidates = others[top]
    u = scores[top]
    session = _Session(state, source, candidates, u)
    assignment, P = choose_slots(state, session)
    slot_idx = np.asarray(assignment.member_at_slot, dtype=int)
    shown = candidates[slot_idx]
    v = session.v

    clicks = state.rng.click.random(m) < cfg.p_base * v
    created = []
    A = state.adjacency
    for k in np.flatnonzero(clicks):
        j = int(shown[k])
        if A[source, j] == 0:
            A[source, j] = A[j, source] = 1.0
            created.append(j)

    if cfg.source_utility == "top_scores":
        source_util = float(np.sort(scores)[::-1][:m] @ v)
    else:
        source_util = float(u[slot_idx] @ v)
    labels = state.groups.labels
    if cfg.dest_increment == "fractional" and P is not None:
        inc = P @ v
        touched = np.flatnonzero(inc > 0)
        state.ledger.update_dest_many(candidates[touched], inc[touched], T)
    else:
        state.ledger.update_dest_many(shown, v, T)
    state.ledger.update_source(int(labels[source]), source_util, T, member=source)

    record = {
        "iteration": T,
        "source": source,
        "source_group": int(labels[source]),
        "shown": [int(j) for j in shown],
        "shown_groups": [int(labels[j]) for j in shown],
        "slots": list(range(1, m + 1)),
        "pos_bias": [float(x) for x in v],
        "shown_scores": [float(x) for x in u[slot_idx]],
        "edges_created": created,
        "source_utility": source_util,
        "candidate_group_counts": [int(np.count_nonzero(session.labels == 0)),
                                   int(np.count_nonzero(session.labels == 1))],
    }
    state.session_log.append(record)
    state.iteration += 1
    return record


@dataclass
class SimResult:
    config: SimConfig
    records: list
    state: SimState

    def write_log(self, path) -> None:
        write_session_log(self.records, path)


def write_session_log(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_session_log(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def iterate_simulation(config: SimConfig, state: SimState | None = None) -> Iterator[dict]:
    config.validate()
    if state is None:
        state = init_graph(config)
    else:
        state.reset_loop_rng()
    for _ in range(config.iterations_for_policy):
        yield run_iteration(state)


def run_simulation(config: SimConfig, progress: Callable[[int], None] | None = None) -> SimResult:
    """Run one replicate of ``config.policy`` from a freshly generated graph."""
    config.validate()
    state = init_graph(config)
    for t in range(config.iterations_for_policy):
        run_iteration(state)
        if progress is not None:
            progress(t)
    return SimResult(config, state.session_log, state)
