"""Multi-stage trial state: accumulate stage data, recommend, analyze.

A trial is configured once (stage plan, bounds, cost, goals) and then moves
through its stages: each completed stage's data is ingested, the outcome
model is refitted on everything observed so far, and the next stage's
package is recommended.  After the last stage the final test and the final
cost-optimal package (outcome goal only) are computed from the pooled data.

States are values: ``ingest_stage`` and ``stop_for_futility`` return new
states and never modify their argument.  The ``recommendations`` field is a
per-stage memo of what ``next_recommendation`` computed; replaying the same
stage records through a fresh state reproduces it exactly.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cost import CostFunction
from .errors import OutOfOrderStageError
from .model import (
    CenterData,
    FittedModel,
    StageRecord,
    fit_binary,
    fit_continuous,
)
from .optimizer import GoalSpec, Recommendation, recommend_stage_k, _recommend_core
from .power import ArmSummary, TestResult, TestSelector
from .power import final_test as _summary_final_test
from .power import conditional_power, unconditional_power

__all__ = [
    "PlannedStage",
    "TrialConfig",
    "TrialState",
    "new_trial",
    "ingest_stage",
    "refit",
    "next_recommendation",
    "final_optimal",
    "check_futility",
    "stop_for_futility",
    "final_test",
    "to_document",
    "from_document",
    "save_state",
    "load_state",
]

DOCUMENT_FORMAT = "lago-trial-state"
DOCUMENT_VERSION = 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlannedStage:
    """Planned per-arm sample for one stage.

    ``n_intervention`` / ``n_control`` are total observations;
    ``centers_intervention`` / ``centers_control`` how many centers they are
    split across (equal splits — unequal realized centers are fine at
    ingestion, the plan only drives projections and per-center modes).
    """

    n_intervention: float
    n_control: float
    centers_intervention: int = 1
    centers_control: int = 1

    def __post_init__(self):
        if self.n_intervention < 0 or self.n_control < 0:
            raise ValueError("planned sizes must be nonnegative")
        if self.n_intervention + self.n_control <= 0:
            raise ValueError("a planned stage needs a positive sample")
        if self.centers_intervention < 0 or self.centers_control < 0:
            raise ValueError("planned center counts must be nonnegative")


@dataclass(frozen=True)
class TrialConfig:
    """Immutable trial plan: stages, component bounds, cost, and goals."""

    stages: tuple
    bounds: tuple
    cost: CostFunction
    goals: GoalSpec
    outcome_kind: str = "binary"
    outcome_link: str = "identity"  # used only for continuous outcomes
    stage1_package: tuple | None = None  # shrinking anchor; default: observed mean

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(
            self, "bounds", tuple((float(a), float(b)) for a, b in self.bounds)
        )
        if self.stage1_package is not None:
            pkg = tuple(float(v) for v in self.stage1_package)
            if len(pkg) != len(self.bounds):
                raise ValueError(
                    "stage1_package must have one value per bounded component"
                )
            if not all(np.isfinite(pkg)):
                raise ValueError("stage1_package values must be finite")
            object.__setattr__(self, "stage1_package", pkg)
        if len(self.stages) < 2:
            raise ValueError("a staged trial needs at least two planned stages")
        if not all(isinstance(s, PlannedStage) for s in self.stages):
            raise ValueError("stages must be PlannedStage instances")
        if self.outcome_kind not in ("binary", "continuous"):
            raise ValueError("outcome_kind must be 'binary' or 'continuous'")
        if not self.bounds:
            raise ValueError("bounds must list at least one component")
        if any(a > b for a, b in self.bounds):
            raise ValueError("each lower bound must not exceed its upper bound")
        if self.cost.max_component >= len(self.bounds):
            raise ValueError(
                "cost references a component beyond the configured bounds"
            )

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def n_components(self) -> int:
        return len(self.bounds)

    def to_config(self) -> dict:
        out = {
            "stages": [dataclasses.asdict(s) for s in self.stages],
            "bounds": [list(b) for b in self.bounds],
            "cost": self.cost.to_config(),
            "goals": self.goals.to_config(),
            "outcome_kind": self.outcome_kind,
            "outcome_link": self.outcome_link,
        }
        if self.stage1_package is not None:
            out["stage1_package"] = list(self.stage1_package)
        return out

    @classmethod
    def from_config(cls, entry: dict) -> "TrialConfig":
        stage1 = entry.get("stage1_package")
        return cls(
            stages=tuple(PlannedStage(**s) for s in entry["stages"]),
            bounds=tuple(tuple(b) for b in entry["bounds"]),
            cost=CostFunction.from_config(entry["cost"]),
            goals=GoalSpec.from_config(entry["goals"]),
            outcome_kind=entry.get("outcome_kind", "binary"),
            outcome_link=entry.get("outcome_link", "identity"),
            stage1_package=tuple(stage1) if stage1 is not None else None,
        )


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class TrialState:
    """Where a trial stands: completed stage data, memoized recommendations,
    and a monotone status (awaiting-stage-k -> complete / stopped-futility)."""

    config: TrialConfig
    completed: tuple = ()
    recommendations: list = field(default_factory=list)
    status: str = "awaiting-stage-1"

    @property
    def next_stage(self) -> int:
        return len(self.completed) + 1

    def future_arm_sizes(self, k: int):
        """Total planned (intervention, control) observations for stages k..K."""
        n1 = sum(s.n_intervention for s in self.config.stages[k - 1:])
        n0 = sum(s.n_control for s in self.config.stages[k - 1:])
        return float(n1), float(n0)


def new_trial(config: TrialConfig) -> TrialState:
    return TrialState(config=config)


def ingest_stage(state: TrialState, record: StageRecord) -> TrialState:
    """Fold one completed stage into the trial; returns the advanced state.

    Stages arrive strictly in order.  Packages the centers actually ran may
    deviate from the recommendation and even from the configured bounds —
    deviations are warned about, never rejected, and every later fit uses
    the actual packages.
    """
    if state.status == "complete":
        raise OutOfOrderStageError("the trial is already complete")
    if state.status == "stopped-futility":
        raise OutOfOrderStageError("the trial was stopped for futility")
    expected = state.next_stage
    if record.stage_index != expected:
        raise OutOfOrderStageError(
            f"expected stage {expected}, got stage {record.stage_index}"
        )
    if record.n_components != state.config.n_components:
        raise ValueError(
            f"stage packages have {record.n_components} components, "
            f"the trial is configured for {state.config.n_components}"
        )
    lo = np.array([b[0] for b in state.config.bounds])
    hi = np.array([b[1] for b in state.config.bounds])
    for c in record.centers:
        if c.arm == 1 and (np.any(c.package < lo) or np.any(c.package > hi)):
            warnings.warn(
                f"stage {record.stage_index}: a center ran package "
                f"{np.asarray(c.package).tolist()} outside the configured bounds",
                stacklevel=2,
            )
    completed = state.completed + (record,)
    done = len(completed) >= state.config.n_stages
    status = "complete" if done else f"awaiting-stage-{len(completed) + 1}"
    return TrialState(
        config=state.config,
        completed=completed,
        recommendations=list(state.recommendations),
        status=status,
    )


def refit(state: TrialState) -> FittedModel:
    """Outcome model fitted on all completed stages pooled."""
    if not state.completed:
        raise ValueError("no completed stages to fit")
    if state.config.outcome_kind == "binary":
        return fit_binary(state.completed)
    return fit_continuous(state.completed, link=state.config.outcome_link)


def next_recommendation(state: TrialState) -> Recommendation:
    """Recommended package for the next stage, refitting on everything seen.

    Also memoized into ``state.recommendations`` so a serialized state
    remembers it; recomputing from the same records gives the same answer.
    """
    if state.status == "complete":
        raise ValueError("the trial is complete; use final_optimal")
    if state.status == "stopped-futility":
        raise ValueError("the trial was stopped for futility")
    if not state.completed:
        raise ValueError("the first recommendation needs stage-1 data")
    k = state.next_stage
    if len(state.recommendations) >= k - 1:
        return state.recommendations[k - 2]
    model = refit(state)
    rec = recommend_stage_k(
        model, state, state.config.goals,
        cost=state.config.cost, bounds=state.config.bounds, k=k,
        stage1_fallback_x=state.config.stage1_package,
    )
    state.recommendations.append(rec)
    return rec


def final_optimal(state: TrialState) -> Recommendation:
    """Cost-optimal package from the completed trial, outcome goal only.

    Any configured power goal is deliberately ignored: the trial's final
    product is the cheapest package meeting the outcome goal under the
    all-data fit (with the same best-achievable/shrinking fallbacks as the
    staged recommendations).
    """
    if state.status != "complete":
        raise ValueError("final_optimal needs a complete trial")
    goals = state.config.goals
    if goals.outcome_goal is None:
        raise ValueError("final_optimal needs an outcome goal")
    stripped = dataclasses.replace(goals, power_goal=None)
    model = refit(state)
    from .optimizer import _stage1_anchor

    anchor = state.config.stage1_package
    if anchor is None:
        anchor = _stage1_anchor(state)
    return _recommend_core(
        model, None, stripped, state.config.cost, state.config.bounds, anchor,
    )


def check_futility(state: TrialState):
    """(futile, best_projected_power): can the power goal still be met?

    Evaluates the projected power at the best-outcome extreme of the bounds
    — the most optimistic continuation.  Reported only; stopping is the
    operator's call (``stop_for_futility``).  Without a power goal there is
    nothing to check: (False, None).
    """
    goals = state.config.goals
    if goals.power_goal is None:
        return False, None
    if not state.completed:
        raise ValueError("futility is assessed on at least one completed stage")
    model = refit(state)
    lo = np.array([b[0] for b in state.config.bounds])
    hi = np.array([b[1] for b in state.config.bounds])
    effects = model.effects if goals.direction == "increase" else -model.effects
    x_ext = np.where(effects > 0, hi, lo)
    k = state.next_stage
    records = [rec for rec in state.completed if rec.stage_index < k]
    summary = ArmSummary.from_records(
        records,
        future=state.future_arm_sizes(k),
        continuous=goals.test.continuous_outcome,
    )
    if goals.approach == "conditional":
        power = conditional_power(
            x_ext, model, summary, goals.test, goals.alpha,
            direction=goals.direction,
        )
    else:
        power = unconditional_power(x_ext, model, summary, goals.test, goals.alpha)
    return power < goals.power_goal, power


def stop_for_futility(state: TrialState) -> TrialState:
    """Operator decision to stop; only an awaiting trial can be stopped."""
    if not state.status.startswith("awaiting"):
        raise ValueError(f"cannot stop a trial with status {state.status!r}")
    return TrialState(
        config=state.config,
        completed=state.completed,
        recommendations=list(state.recommendations),
        status="stopped-futility",
    )


def final_test(
    state: TrialState, test: TestSelector | None = None, alpha: float = 0.05
) -> TestResult:
    """Final-analysis test on the completed trial's pooled data.

    ``test`` defaults to the configured goal's test, or the plain
    unpooled test for the outcome kind when the goals never named one.
    """
    if state.status != "complete":
        raise ValueError("the final test runs on a complete trial")
    if test is None:
        test = state.config.goals.test
    if test is None:
        kind = "t_unpooled" if state.config.outcome_kind == "continuous" else "z_unpooled"
        test = TestSelector(kind)
    summary = ArmSummary.from_records(
        state.completed, future=(0.0, 0.0), continuous=test.continuous_outcome
    )
    model = refit(state) if test.wald else None
    return _summary_final_test(summary, test, alpha=alpha, model=model)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _center_to_dict(c: CenterData) -> dict:
    return {
        "arm": int(c.arm),
        "package": np.asarray(c.package, dtype=float).tolist(),
        "outcomes": np.asarray(c.outcomes, dtype=float).tolist(),
    }


def _center_from_dict(entry: dict) -> CenterData:
    return CenterData(
        arm=int(entry["arm"]),
        package=np.asarray(entry["package"], dtype=float),
        outcomes=np.asarray(entry["outcomes"], dtype=float),
    )


def _record_to_dict(rec: StageRecord) -> dict:
    return {
        "stage_index": int(rec.stage_index),
        "centers": [_center_to_dict(c) for c in rec.centers],
    }


def _record_from_dict(entry: dict) -> StageRecord:
    return StageRecord(
        stage_index=int(entry["stage_index"]),
        centers=[_center_from_dict(c) for c in entry["centers"]],
    )


def _rec_to_dict(rec: Recommendation) -> dict:
    return {
        "x_hat": np.asarray(rec.x_hat, dtype=float).tolist(),
        "regime": rec.regime,
        "achieved_outcome": float(rec.achieved_outcome),
        "required_threshold": float(rec.required_threshold),
        "projected_power": (
            None if rec.projected_power is None else float(rec.projected_power)
        ),
        "cost": float(rec.cost),
    }


def _rec_from_dict(entry: dict) -> Recommendation:
    return Recommendation(
        x_hat=np.asarray(entry["x_hat"], dtype=float),
        regime=entry["regime"],
        achieved_outcome=float(entry["achieved_outcome"]),
        required_threshold=float(entry["required_threshold"]),
        projected_power=(
            None if entry["projected_power"] is None
            else float(entry["projected_power"])
        ),
        cost=float(entry["cost"]),
    )


def to_document(state: TrialState) -> dict:
    """JSON-ready snapshot of the whole trial for resume-between-stages."""
    return {
        "format": DOCUMENT_FORMAT,
        "version": DOCUMENT_VERSION,
        "config": state.config.to_config(),
        "completed": [_record_to_dict(r) for r in state.completed],
        "recommendations": [_rec_to_dict(r) for r in state.recommendations],
        "status": state.status,
    }


def from_document(doc: dict) -> TrialState:
    if doc.get("format") != DOCUMENT_FORMAT:
        raise ValueError(f"not a {DOCUMENT_FORMAT} document")
    if doc.get("version") != DOCUMENT_VERSION:
        raise ValueError(f"unsupported document version {doc.get('version')!r}")
    return TrialState(
        config=TrialConfig.from_config(doc["config"]),
        completed=tuple(_record_from_dict(r) for r in doc["completed"]),
        recommendations=[_rec_from_dict(r) for r in doc["recommendations"]],
        status=doc["status"],
    )


def save_state(state: TrialState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_document(state), fh, indent=2)
        fh.write("\n")


def load_state(path) -> TrialState:
    with open(path, "r", encoding="utf-8") as fh:
        return from_document(json.load(fh))
