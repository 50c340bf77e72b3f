"""Finite-difference verification of the analytic logit gradients.

Each random instance draws logits, soft targets, and a handful of
constraints, then compares the analytic gradient of fidelity + alpha *
spatial against central differences. The half-plane masks and constraint
weights are compiled once at the evaluation point and held fixed on both
sides of the comparison, matching their treat-as-constant semantics.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .logic import SpatialLossConfig, compile_constraints, compiled_spatial_loss, logit_gradient_from_terms
from .refine import fidelity_loss
from .relations import Relation, SpatialTriplet, TripletSet
from .state import SegmentationState

DEFAULT_SIZES: tuple[tuple[int, int], ...] = ((1, 1), (2, 3), (4, 4), (5, 7), (8, 8))
DEFAULT_TOLERANCE = 1e-4
FD_STEP = 1e-4


def finite_difference_gradient(
    objective: Callable[[np.ndarray], float], point: np.ndarray, h: float = FD_STEP
) -> np.ndarray:
    """Central differences of a scalar objective, one coordinate at a time."""
    grad = np.zeros_like(point)
    flat = grad.reshape(-1)
    base = point.copy().reshape(-1)
    for i in range(base.size):
        saved = base[i]
        base[i] = saved + h
        upper = objective(base.reshape(point.shape))
        base[i] = saved - h
        lower = objective(base.reshape(point.shape))
        base[i] = saved
        flat[i] = (upper - lower) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class GradCheckResult:
    instance: int
    height: int
    width: int
    n_categories: int
    n_constraints: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _random_instance(
    rng: np.random.Generator,
    height: int,
    width: int,
    n_categories: int,
    n_constraints: int,
) -> tuple[SegmentationState, np.ndarray, TripletSet]:
    roster = tuple(f"c{i}" for i in range(n_categories))
    logits = rng.normal(0.0, 1.0, (n_categories, height, width))
    state = SegmentationState.from_logits(roster, logits)

    targets = rng.random((n_categories, height, width))
    targets = targets / targets.sum(axis=0, keepdims=True)

    candidates = [
        (s, r, o)
        for s, o in product(roster, roster)
        if s != o
        for r in Relation
    ]
    picks = rng.choice(len(candidates), size=min(n_constraints, len(candidates)), replace=False)
    triplets = TripletSet(
        tuple(SpatialTriplet(*candidates[int(p)]) for p in sorted(picks)), roster
    )
    return state, targets, triplets


def check_instance(
    state: SegmentationState,
    targets: np.ndarray,
    triplets: TripletSet,
    alpha: float = 0.1,
    loss_cfg: SpatialLossConfig | None = None,
    corrupt: bool = False,
) -> float:
    """Max-norm relative error between analytic and finite-difference gradients.

    `corrupt` perturbs one analytic component, a negative control that must
    make the check fail.
    """
    loss_cfg = loss_cfg or SpatialLossConfig()
    compiled = compile_constraints(state, triplets, loss_cfg)

    def objective(logits: np.ndarray) -> float:
        probe = state.with_logits(logits)
        fid, _ = fidelity_loss(probe, targets, reduction=loss_cfg.reduction)
        spa, _ = compiled_spatial_loss(probe, compiled, loss_cfg)
        return fid + alpha * spa

    _, fid_grad = fidelity_loss(state, targets, reduction=loss_cfg.reduction)
    _, terms = compiled_spatial_loss(state, compiled, loss_cfg)
    analytic = fid_grad + alpha * logit_gradient_from_terms(state, terms)
    if corrupt:
        analytic = analytic.copy()
        analytic.reshape(-1)[0] += 1e-2

    numeric = finite_difference_gradient(objective, state.logits)
    scale = max(float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale


def run_gradcheck(
    seed: int = 0,
    sizes: Sequence[tuple[int, int]] = DEFAULT_SIZES,
    instances: int = 20,
    alpha: float = 0.1,
    tolerance: float = DEFAULT_TOLERANCE,
    loss_cfg: SpatialLossConfig | None = None,
    corrupt: bool = False,
) -> list[GradCheckResult]:
    """Randomized gradient checks across grid sizes and category counts."""
    rng = np.random.default_rng(seed)
    results = []
    for instance in range(instances):
        height, width = sizes[instance % len(sizes)]
        n_categories = int(rng.integers(2, 5))
        n_constraints = int(rng.integers(2, 5))
        state, targets, triplets = _random_instance(rng, height, width, n_categories, n_constraints)
        error = check_instance(state, targets, triplets, alpha, loss_cfg, corrupt=corrupt)
        results.append(
            GradCheckResult(
                instance=instance,
                height=height,
                width=width,
                n_categories=n_categories,
                n_constraints=n_constraints,
                max_rel_error=error,
                tolerance=tolerance,
            )
        )
    return results
