"""Entropic optimal transport between class-conditional beat distributions.

The solver couples a sampled batch of majority-class beats to a batch of
minority-class beats (squared euclidean cost, entropic regularization,
log-domain Sinkhorn scaling) and maps each source beat to the plan-weighted
average of the target batch. Synthetic beats inherit the target label; the
rebalancing planner sizes each class's deficit against the majority count.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import accel
from .errors import InvalidArgument, ZeroMassRow
from .ingest import DatasetStats, DiagnosticClass

logger = logging.getLogger(__name__)

DEFAULT_GAMMA_SCALE = 0.05
DEFAULT_BATCH_SIZE = 64
DEFAULT_MAX_ITER = 1000
DEFAULT_TOL = 1e-6
MASS_TOL = 1e-12
EXACT_MAX_SIZE = 8


@dataclass
class EmpiricalMeasure:
    """Point cloud with probability masses; uniform masses unless configured."""

    points: np.ndarray  # (n, d)
    masses: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if self.points.shape[0] < 1:
            raise InvalidArgument("empirical measure needs at least one point")
        if self.masses.shape != (self.points.shape[0],):
            raise InvalidArgument("one mass per point required")
        if (self.masses <= 0).any():
            raise InvalidArgument("masses must be strictly positive")
        if abs(self.masses.sum() - 1.0) > MASS_TOL:
            raise InvalidArgument("masses must sum to 1")

    @classmethod
    def uniform(cls, points: np.ndarray) -> "EmpiricalMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class TransportPlan:
    """Coupling matrix with its solve diagnostics."""

    matrix: np.ndarray  # (n_s, n_t)
    gamma: float
    iterations_used: int
    marginal_error: float
    converged: bool

    def transport_cost(self, cost: np.ndarray) -> float:
        return float((self.matrix * cost).sum())


@dataclass
class BarycentricResult:
    points: np.ndarray  # (n_kept, d)
    dropped_rows: np.ndarray  # indices of zero-mass source rows


def cost_matrix(source: EmpiricalMeasure, target: EmpiricalMeasure) -> np.ndarray:
    """Squared euclidean cost between source and target points."""
    if source.points.shape[1] != target.points.shape[1]:
        raise InvalidArgument(
            f"point dimensions differ: {source.points.shape[1]} vs {target.points.shape[1]}"
        )
    return accel.pairwise_sq_dists(source.points, target.points)


def _round_to_feasible(pi: np.ndarray, p_s: np.ndarray, p_t: np.ndarray) -> np.ndarray:
    """Project a near-feasible plan onto the coupling polytope exactly.

    Caps rows then columns at their marginals and fills the residual mass
    with a rank-one term; the cost shift is of the order of the violation.
    """
    r = pi.sum(axis=1)
    pi = pi * np.minimum(1.0, np.where(r > 0, p_s / np.where(r > 0, r, 1.0), 1.0))[:, None]
    c = pi.sum(axis=0)
    pi = pi * np.minimum(1.0, np.where(c > 0, p_t / np.where(c > 0, c, 1.0), 1.0))[None, :]
    err_r = np.maximum(p_s - pi.sum(axis=1), 0.0)
    err_c = np.maximum(p_t - pi.sum(axis=0), 0.0)
    total = err_c.sum()
    if total > 0:
        pi = pi + np.outer(err_r, err_c) / total
    return pi


def sinkhorn(
    cost: np.ndarray,
    p_s: np.ndarray,
    p_t: np.ndarray,
    gamma: float,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> TransportPlan:
    """Entropy-regularized coupling via log-domain Sinkhorn scaling.

    Alternates the row/column scalings of exp(-C/gamma) until the largest
    marginal violation drops below ``tol`` or ``max_iter`` is reached, then
    projects the result onto the coupling polytope so the returned matrix has
    exact marginals. ``converged`` and ``iterations_used`` describe the
    scaling loop; ``marginal_error`` describes the returned matrix. A plan
    whose loop did not reach ``tol`` is returned flagged, never silently.
    """
    cost = np.asarray(cost, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    p_t = np.asarray(p_t, dtype=np.float64)
    if gamma <= 0:
        raise InvalidArgument("gamma must be positive")
    if cost.shape != (p_s.size, p_t.size):
        raise InvalidArgument("cost shape must match the marginal sizes")
    if (p_s <= 0).any() or (p_t <= 0).any():
        raise InvalidArgument("masses must be strictly positive")
    pi, iters, err = accel.sinkhorn_log(cost, p_s, p_t, gamma, max_iter, tol)
    converged = err < tol
    if not converged:
        logger.warning(
            "sinkhorn did not converge: %d iterations, marginal error %.3e", iters, err
        )
    pi = _round_to_feasible(pi, p_s, p_t)
    final_err = max(
        np.abs(pi.sum(axis=1) - p_s).max(),
        np.abs(pi.sum(axis=0) - p_t).max(),
    )
    return TransportPlan(pi, float(gamma), iters, float(final_err), converged)


def exact_ot_small(
    cost: np.ndarray, p_s: np.ndarray, p_t: np.ndarray
) -> TransportPlan:
    """Exact unregularized optimum on a small instance (LP oracle).

    Limited to 8x8 so the linear program stays trivially solvable; used to
    validate the regularized solver.
    """
    cost = np.asarray(cost, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    p_t = np.asarray(p_t, dtype=np.float64)
    ns, nt = cost.shape
    if ns > EXACT_MAX_SIZE or nt > EXACT_MAX_SIZE:
        raise InvalidArgument(f"exact solver limited to {EXACT_MAX_SIZE} points per side")
    a_eq = np.zeros((ns + nt, ns * nt))
    for i in range(ns):
        a_eq[i, i * nt : (i + 1) * nt] = 1.0
    for j in range(nt):
        a_eq[ns + j, j::nt] = 1.0
    b_eq = np.concatenate([p_s, p_t])
    res = optimize.linprog(
        cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs"
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    pi = res.x.reshape(ns, nt)
    err = max(
        np.abs(pi.sum(axis=1) - p_s).max(),
        np.abs(pi.sum(axis=0) - p_t).max(),
    )
    return TransportPlan(pi, 0.0, int(res.nit), float(err), True)


def barycentric_map(plan: TransportPlan, target: EmpiricalMeasure) -> BarycentricResult:
    """Map each source point to the plan-weighted average of the target points.

    Rows with zero transported mass cannot be mapped; they are dropped and
    reported through ``dropped_rows``.
    """
    pi = plan.matrix
    if pi.shape[1] != target.n:
        raise InvalidArgument("plan column count must match the target size")
    row_mass = pi.sum(axis=1)
    keep = row_mass > 0.0
    dropped = np.nonzero(~keep)[0]
    if not keep.any():
        raise ZeroMassRow("every source row has zero mass")
    if dropped.size:
        logger.warning("barycentric map dropped %d zero-mass source rows", dropped.size)
    mapped = (pi[keep] @ target.points) / row_mass[keep, None]
    return BarycentricResult(mapped, dropped)


@dataclass
class AugmentationTask:
    source_class: DiagnosticClass
    target_class: DiagnosticClass
    n_synthetic: int


def plan_augmentation(stats: DatasetStats) -> list[AugmentationTask]:
    """Deficit of every minority class against the majority beat count.

    The majority source is always NORM; this is validated against the counts
    rather than assumed. Classes at or above the majority need nothing.
    """
    counts = stats.beat_counts
    max_count = max(counts.values())
    if counts[DiagnosticClass.NORM] != max_count:
        raise InvalidArgument("NORM is not the majority class by beat count")
    tasks = []
    for klass in DiagnosticClass:
        if klass == DiagnosticClass.NORM:
            continue
        deficit = max_count - counts[klass]
        if deficit > 0:
            tasks.append(AugmentationTask(DiagnosticClass.NORM, klass, deficit))
    return tasks


@dataclass
class BatchProvenance:
    batch_index: int
    batch_seed: int
    gamma: float
    marginal_error: float
    source_indices: np.ndarray
    target_indices: np.ndarray
    n_produced: int


@dataclass
class AugmentationResult:
    points: np.ndarray  # (n_needed, d) synthetic beats, flattened
    target_class: DiagnosticClass
    batches: list[BatchProvenance] = field(default_factory=list)
    skipped_batches: int = 0


def augment_class(
    source_points: np.ndarray,
    target_points: np.ndarray,
    target_class: DiagnosticClass,
    n_needed: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    gamma_scale: float = DEFAULT_GAMMA_SCALE,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> AugmentationResult:
    """Produce ``n_needed`` synthetic points labeled ``target_class``.

    Repeats {sample source batch, sample target batch, solve, map} until the
    quota is filled. Per batch, gamma = gamma_scale x mean(C). A batch whose
    solve does not converge is retried once with gamma doubled, then skipped.
    Deterministic for a fixed seed.
    """
    source_points = np.atleast_2d(np.asarray(source_points, dtype=np.float64))
    target_points = np.atleast_2d(np.asarray(target_points, dtype=np.float64))
    if source_points.shape[0] == 0 or target_points.shape[0] == 0:
        raise InvalidArgument("both classes must be non-empty")
    if source_points.shape[1] != target_points.shape[1]:
        raise InvalidArgument("source and target dimensions differ")
    result = AugmentationResult(
        np.empty((0, source_points.shape[1])), target_class
    )
    if n_needed <= 0:
        return result

    rng = np.random.default_rng(seed)
    chunks: list[np.ndarray] = []
    produced = 0
    batch_index = 0
    consecutive_skips = 0
    while produced < n_needed:
        if consecutive_skips >= 20:
            raise RuntimeError(
                "augmentation stalled: 20 consecutive batches failed to converge"
            )
        batch_seed = int(rng.integers(0, 2**31 - 1))
        batch_rng = np.random.default_rng(batch_seed)
        ns = min(batch_size, source_points.shape[0])
        nt = min(batch_size, target_points.shape[0])
        src_idx = batch_rng.choice(source_points.shape[0], size=ns, replace=False)
        tgt_idx = batch_rng.choice(target_points.shape[0], size=nt, replace=False)
        source = EmpiricalMeasure.uniform(source_points[src_idx])
        target = EmpiricalMeasure.uniform(target_points[tgt_idx])
        cost = cost_matrix(source, target)
        gamma = gamma_scale * float(cost.mean())
        if gamma <= 0.0:
            gamma = 1e-12
        plan = sinkhorn(cost, source.masses, target.masses, gamma, max_iter, tol)
        if not plan.converged:
            plan = sinkhorn(cost, source.masses, target.masses, 2 * gamma, max_iter, tol)
        if not plan.converged:
            logger.warning(
                "augmentation batch %d skipped after retry (marginal error %.3e)",
                batch_index,
                plan.marginal_error,
            )
            result.skipped_batches += 1
            consecutive_skips += 1
            batch_index += 1
            continue
        consecutive_skips = 0
        mapped = barycentric_map(plan, target)
        chunks.append(mapped.points)
        result.batches.append(
            BatchProvenance(
                batch_index=batch_index,
                batch_seed=batch_seed,
                gamma=plan.gamma,
                marginal_error=plan.marginal_error,
                source_indices=src_idx,
                target_indices=tgt_idx,
                n_produced=mapped.points.shape[0],
            )
        )
        produced += mapped.points.shape[0]
        batch_index += 1
    result.points = np.concatenate(chunks, axis=0)[:n_needed]
    return result
