"""Fair two-sided marketplace ranking: constraints, a dual-based solver, online
scoring, a utility ledger and a member-to-member simulator."""

from .constraints import (ConstraintKind, ConstraintVector, GroupUtilitySnapshot, build_di_vector,
                          build_dp_vector, build_dt_vector, build_dynamic_constraint,
                          build_source_target, equality_of_opportunity_epsilon)
from .errors import (ConfigError, DegenerateUtilityError, EmptyGroupError, FairMarketError,
                     InvalidSlotError, NotInitializedError, ShapeError, TimeRegressionError,
                     UnknownGroupError)
from .ledger import UtilityLedger
from .metrics import BootstrapSummary, MetricRow, bootstrap, compute_metrics, emit_tables
from .model import (GroupAssignment, RankingPolicy, SlotAssignment, expected_dest_utility,
                    expected_source_utility, position_bias, position_biases)
from .scoring import DualStore, DualVariables, dual_to_primal, greedy_assign, project_simplex, score_session
from .sim import POLICIES, SimConfig, init_graph, run_simulation
from .solver import SolverOptions, Status, assemble, kkt_residuals, solve, solve_source_fair

__version__ = "0.1.0"
