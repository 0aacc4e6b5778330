"""Cost-minimal intervention recommendations under outcome and power goals.

The recommendation problem is: among packages x inside the component bounds,
minimize the implementation cost subject to the fitted model predicting an
outcome level at least as good as the outcome goal, and (optionally) the
selected final test retaining its power target when the remaining stages are
run at x.  Because the linear predictor is affine in x and the cost is a sum
of per-component polynomials, the constrained minimization can be solved
essentially exactly: the constraint is a half-space on the linear-predictor
scale and the objective is separable.

Everything here works on the "increase" orientation internally; a decrease
goal is handled by mirroring the model (all coefficients sign-flipped) and
mirroring levels through the link, so that lower raw outcome levels become
higher working levels.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from .cost import CostFunction
from .errors import InfeasibleError, NoThresholdError
from .model import FittedModel, link_forward, link_inverse, mirrored, predict
from .power import (
    ArmSummary,
    TestSelector,
    conditional_power,
    conditional_slack_at_level,
    lambda_min,
    projected_drift_at_level,
    unconditional_power,
    unconditional_power_at_level,
)

__all__ = [
    "GoalSpec",
    "Recommendation",
    "p_max",
    "min_cost_subject_to_threshold",
    "power_threshold",
    "recommend",
    "recommend_stage_k",
    "plan_stage1",
    "shrinking_method",
    "integerize",
    "min_cost_per_center",
]

_DIRECTIONS = ("increase", "decrease")

# Regime labels attached to every recommendation.
REGIME_GOAL = "goal-feasible"
REGIME_PMAX = "pmax-fallback"
REGIME_SHRINK = "shrinking-fallback"


# ---------------------------------------------------------------------------
# goal specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GoalSpec:
    """What the next recommendation must achieve.

    ``outcome_goal`` is the target outcome level (probability for binary
    outcomes, mean for continuous ones) in the raw orientation; ``direction``
    says whether higher or lower levels are better.  ``power_goal`` adds the
    requirement that the final test keep power ``power_goal`` at level
    ``alpha``, certified either unconditionally (pre-trial formula applied to
    all stages) or conditionally on the data observed so far.
    """

    outcome_goal: float | None = None
    direction: str = "increase"
    power_goal: float | None = None
    alpha: float = 0.05
    approach: str = "unconditional"
    test: TestSelector | None = None
    conditional_scale: str = "sd"

    def __post_init__(self):
        if self.direction not in _DIRECTIONS:
            raise ValueError(f"direction must be one of {_DIRECTIONS}")
        if self.outcome_goal is None and self.power_goal is None:
            raise ValueError("at least one of outcome_goal and power_goal is required")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.approach not in ("unconditional", "conditional"):
            raise ValueError("approach must be 'unconditional' or 'conditional'")
        if self.conditional_scale not in ("sd", "variance"):
            raise ValueError("conditional_scale must be 'sd' or 'variance'")
        if self.power_goal is not None:
            if not 0.0 < self.power_goal < 1.0:
                raise ValueError("power_goal must be in (0, 1)")
            if self.test is None:
                raise ValueError("a power goal requires a test selection")
            if self.approach == "conditional" and self.test.wald:
                raise ValueError(
                    "conditional power certificates are only defined for 1-df tests"
                )

    def to_config(self) -> dict:
        """JSON-ready dict; the test selector collapses to its kind string."""
        out = dataclasses.asdict(self)
        out["test"] = self.test.kind if self.test is not None else None
        return out

    @classmethod
    def from_config(cls, entry: dict) -> "GoalSpec":
        data = dict(entry)
        kind = data.get("test")
        if isinstance(kind, str):
            data["test"] = TestSelector(kind)
        return cls(**data)


@dataclass(eq=False)
class Recommendation:
    """A solved recommendation.

    ``required_threshold`` is the outcome level (raw orientation) the solver
    actually enforced: the binding max of the outcome goal and the power
    threshold in the ordinary regime, the best achievable level in the
    fallback regimes.  ``projected_power`` is filled only when a power goal
    was configured.
    """

    x_hat: np.ndarray
    regime: str
    achieved_outcome: float
    required_threshold: float
    projected_power: float | None
    cost: float


# ---------------------------------------------------------------------------
# frame and bounds plumbing
# ---------------------------------------------------------------------------

def _check_direction(direction: str) -> None:
    if direction not in _DIRECTIONS:
        raise ValueError(f"direction must be one of {_DIRECTIONS}")


def _bounds_arrays(bounds, n_components: int):
    arr = np.asarray(bounds, dtype=float)
    if arr.ndim != 2 or arr.shape != (n_components, 2):
        raise ValueError(
            f"bounds must be {n_components} (lower, upper) pairs, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("bounds must be finite")
    lo, hi = arr[:, 0].copy(), arr[:, 1].copy()
    if np.any(lo > hi):
        raise ValueError("each lower bound must not exceed its upper bound")
    return lo, hi


def _check_level_domain(link: str, level: float, what: str = "threshold") -> None:
    if not math.isfinite(level):
        raise ValueError(f"{what} must be finite")
    if link == "logit" and not 0.0 < level < 1.0:
        raise ValueError(f"{what} must be in (0, 1) for a logit-link model")
    if link == "log" and level <= 0.0:
        raise ValueError(f"{what} must be positive for a log-link model")


def _work_model(model: FittedModel, direction: str) -> FittedModel:
    return model if direction == "increase" else mirrored(model)


def _raw_level(link: str, eta_work: float, direction: str) -> float:
    """Raw-orientation outcome level for a working linear predictor value."""
    eta = eta_work if direction == "increase" else -eta_work
    return float(link_inverse(link, eta))


def _eta_extremes(wm: FittedModel, lo, hi):
    contrib_lo = wm.effects * lo
    contrib_hi = wm.effects * hi
    eta_max = wm.intercept + float(np.maximum(contrib_lo, contrib_hi).sum())
    eta_min = wm.intercept + float(np.minimum(contrib_lo, contrib_hi).sum())
    return eta_min, eta_max


def p_max(model: FittedModel, bounds, direction: str = "increase") -> float:
    """Best outcome level the model predicts anywhere inside the bounds.

    For an increase goal this is the maximum predicted level; for a decrease
    goal, the minimum.  The value is the natural feasibility cap: no outcome
    goal beyond it can be met without the shrinking fallback.
    """
    _check_direction(direction)
    lo, hi = _bounds_arrays(bounds, model.n_components)
    wm = _work_model(model, direction)
    _, eta_max = _eta_extremes(wm, lo, hi)
    return _raw_level(model.link, eta_max, direction)


# ---------------------------------------------------------------------------
# separable polynomial minimization over a box cut by a half-space
# ---------------------------------------------------------------------------

def _poly_min(coeffs, a: float, b: float):
    """Exact minimum of a polynomial (ascending coeffs) on [a, b]."""
    if b < a:
        return None
    cands = [a, b]
    dc = np.trim_zeros(npoly.polyder(coeffs), "b")
    if dc.size >= 2:
        for root in npoly.polyroots(dc):
            if abs(root.imag) <= 1e-9 * (1.0 + abs(root.real)):
                t = float(root.real)
                if a < t < b:
                    cands.append(t)
    vals = npoly.polyval(np.asarray(cands), coeffs)
    vmin = float(vals.min())
    tol = 1e-12 * (1.0 + abs(vmin))
    x = min(c for c, v in zip(cands, vals) if v <= vmin + tol)
    return x, float(npoly.polyval(x, coeffs))


class _ComponentPoly:
    """One component's cost polynomial with precomputed stationary points."""

    __slots__ = ("coeffs", "stationary")

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        pts = []
        dc = np.trim_zeros(npoly.polyder(self.coeffs), "b")
        if dc.size >= 2:
            for root in npoly.polyroots(dc):
                if abs(root.imag) <= 1e-9 * (1.0 + abs(root.real)):
                    pts.append(float(root.real))
        self.stationary = tuple(sorted(set(pts)))

    def __call__(self, x: float) -> float:
        return float(npoly.polyval(x, self.coeffs))

    def min_on(self, a: float, b: float):
        if b < a:
            return None
        cands = [a, b] + [t for t in self.stationary if a < t < b]
        vals = [self(t) for t in cands]
        vmin = min(vals)
        tol = 1e-12 * (1.0 + abs(vmin))
        x = min(c for c, v in zip(cands, vals) if v <= vmin + tol)
        return x, self(x)

    def options_on(self, a: float, b: float):
        """Bound and interior stationary values — the candidate fixings."""
        return sorted({a, b, *(t for t in self.stationary if a < t < b)})


def _feasible_slice(beta: float, lo: float, hi: float, residual: float):
    """Interval of x with beta * x >= residual inside [lo, hi], or None."""
    if beta > 0.0:
        a = max(lo, residual / beta)
        return (a, hi) if a <= hi else None
    a = min(hi, residual / beta)
    return (lo, a) if a >= lo else None


def _min_pair(info_f, info_g, bf, bg, box_f, box_g, residual, ftol):
    """Exact min of two components' cost subject to bf*xf + bg*xg >= residual."""
    cands = []

    def consider(xf, xg):
        xf = min(max(xf, box_f[0]), box_f[1])
        xg = min(max(xg, box_g[0]), box_g[1])
        if bf * xf + bg * xg >= residual - ftol:
            cands.append((info_f(xf) + info_g(xg), xf, xg))

    free_f = info_f.min_on(*box_f)
    free_g = info_g.min_on(*box_g)
    consider(free_f[0], free_g[0])
    for a in info_f.options_on(*box_f):
        sl = _feasible_slice(bg, box_g[0], box_g[1], residual - bf * a)
        if sl is not None:
            consider(a, info_g.min_on(*sl)[0])
    for a in info_g.options_on(*box_g):
        sl = _feasible_slice(bf, box_f[0], box_f[1], residual - bg * a)
        if sl is not None:
            consider(info_f.min_on(*sl)[0], a)
    # Constraint-active segment: xg = A + B*xf restricted to both boxes.
    A, B = residual / bg, -bf / bg
    if B > 0.0:
        seg = (max(box_f[0], (box_g[0] - A) / B), min(box_f[1], (box_g[1] - A) / B))
    elif B < 0.0:
        seg = (max(box_f[0], (box_g[1] - A) / B), min(box_f[1], (box_g[0] - A) / B))
    else:  # bf == 0 never reaches here (effective components only)
        seg = (box_f[0] + 1.0, box_f[0])
    if seg[0] <= seg[1]:
        comp = np.polynomial.Polynomial(info_g.coeffs)(
            np.polynomial.Polynomial([A, B])
        )
        h = np.polynomial.Polynomial(info_f.coeffs) + comp
        xf = _poly_min(h.coef, seg[0], seg[1])[0]
        consider(xf, A + B * xf)
    if not cands:
        return None
    best = min(v for v, _, _ in cands)
    tol = max(1e-9, 1e-9 * abs(best))
    return min(((xf, xg) for v, xf, xg in cands if v <= best + tol))


def _greedy_linear(x, lin, beta1, eff, lo, hi, need, ftol):
    """Exact fill for linear costs: cheapest cost-per-eta first."""
    moves = []
    for p in eff:
        target = hi[p] if beta1[p] > 0.0 else lo[p]
        avail = beta1[p] * (target - x[p])
        if avail <= 0.0:
            continue
        moves.append((lin[p] / beta1[p], p, avail))
    moves.sort()
    for _, p, avail in moves:
        if need <= 0.0:
            break
        take = min(avail, need)
        x[p] += take / beta1[p]
        need -= take
    if need > ftol:
        raise InfeasibleError("constraint unreachable inside the bounds")


def _min_cost_eta(beta0, beta1, cost: CostFunction, lo, hi, eta_target):
    """Minimize the separable cost over the box subject to
    beta0 + beta1 @ x >= eta_target.

    Exact for up to two components that actually enter the constraint; with
    more, an exhaustive fixing search, a Lagrangian bisection, and exact
    pairwise descent are combined (deterministic, near-exact).
    """
    beta1 = np.asarray(beta1, dtype=float)
    P = beta1.size
    contrib_lo, contrib_hi = beta1 * lo, beta1 * hi
    eta_max = float(beta0 + np.maximum(contrib_lo, contrib_hi).sum())
    scale = max(1.0, abs(eta_max), abs(eta_target))
    ftol = 1e-9 * scale
    if eta_target > eta_max + ftol:
        raise InfeasibleError(
            f"required linear predictor {eta_target:.6g} exceeds the maximum "
            f"{eta_max:.6g} attainable inside the bounds"
        )
    eta_t = min(eta_target, eta_max)

    infos = {p: _ComponentPoly(cost.component_coefficients(p)) for p in range(P)}
    x = np.empty(P)
    for p in range(P):
        x[p] = infos[p].min_on(lo[p], hi[p])[0]
    if beta0 + float(beta1 @ x) >= eta_t - ftol:
        return x

    eff = [p for p in range(P) if beta1[p] != 0.0 and hi[p] > lo[p]]
    base = beta0 + sum(beta1[p] * x[p] for p in range(P) if p not in eff)
    need = eta_t - base  # residual the effective components must supply

    if cost.is_linear:
        lin = np.zeros(P)
        for comp, deg, coef in cost.terms:
            if comp is not None and deg == 1:
                lin[comp] += coef
        _greedy_linear(x, lin, beta1, eff, lo, hi, eta_t - (beta0 + float(beta1 @ x)), ftol)
        return x

    cands = []

    def consider(values: dict) -> None:
        supplied = sum(beta1[p] * values[p] for p in eff)
        if supplied >= need - ftol and all(
            lo[p] - 1e-12 <= values[p] <= hi[p] + 1e-12 for p in eff
        ):
            total = sum(infos[p](values[p]) for p in eff)
            cands.append((total, tuple(min(max(values[p], lo[p]), hi[p]) for p in eff)))

    # The eta-maximizing corner is always feasible after the clamp above.
    consider({p: (hi[p] if beta1[p] > 0.0 else lo[p]) for p in eff})

    if len(eff) <= 6:
        opts = {p: infos[p].options_on(lo[p], hi[p]) for p in eff}
        for assign in itertools.product(*(opts[p] for p in eff)):
            consider(dict(zip(eff, assign)))
        for f in eff:
            others = [p for p in eff if p != f]
            for assign in itertools.product(*(opts[p] for p in others)):
                rem = need - sum(beta1[p] * v for p, v in zip(others, assign))
                sl = _feasible_slice(beta1[f], lo[f], hi[f], rem)
                if sl is None:
                    continue
                values = dict(zip(others, assign))
                values[f] = infos[f].min_on(*sl)[0]
                consider(values)
        for f, g in itertools.combinations(eff, 2):
            others = [p for p in eff if p not in (f, g)]
            for assign in itertools.product(*(opts[p] for p in others)):
                rem = need - sum(beta1[p] * v for p, v in zip(others, assign))
                res = _min_pair(
                    infos[f], infos[g], beta1[f], beta1[g],
                    (lo[f], hi[f]), (lo[g], hi[g]), rem, ftol,
                )
                if res is None:
                    continue
                values = dict(zip(others, assign))
                values[f], values[g] = res
                consider(values)

    if len(eff) >= 3:
        dual = _dual_candidate(infos, beta1, eff, lo, hi, need, ftol)
        if dual is not None:
            consider(dual)

    if not cands:
        raise InfeasibleError("constraint unreachable inside the bounds")
    best = min(v for v, _ in cands)
    tol = max(1e-9, 1e-9 * abs(best))
    chosen = dict(zip(eff, min(vals for v, vals in cands if v <= best + tol)))

    if len(eff) >= 3:
        chosen = _pair_descent(chosen, infos, beta1, eff, lo, hi, need, ftol)

    for p in eff:
        x[p] = chosen[p]
    return x


def _dual_candidate(infos, beta1, eff, lo, hi, need, ftol):
    """Feasible point from bisecting the multiplier of the eta constraint."""

    def solve(mu):
        out = {}
        for p in eff:
            adj = infos[p].coeffs.copy()
            adj[1] -= mu * beta1[p]
            out[p] = _poly_min(adj, lo[p], hi[p])[0]
        return out

    def supplied(values):
        return sum(beta1[p] * values[p] for p in eff)

    mu_hi, vals = 1.0, None
    for _ in range(60):
        cand = solve(mu_hi)
        if supplied(cand) >= need - ftol:
            vals = cand
            break
        mu_hi *= 2.0
    if vals is None:
        return None
    mu_lo = 0.0
    for _ in range(100):
        mid = 0.5 * (mu_lo + mu_hi)
        cand = solve(mid)
        if supplied(cand) >= need - ftol:
            mu_hi, vals = mid, cand
        else:
            mu_lo = mid
    return vals


def _pair_descent(values, infos, beta1, eff, lo, hi, need, ftol):
    """Exact coordinate descent over component pairs; deterministic."""
    values = dict(values)
    for _ in range(50):
        improved = False
        for f, g in itertools.combinations(eff, 2):
            rem = need - sum(beta1[p] * values[p] for p in eff if p not in (f, g))
            res = _min_pair(
                infos[f], infos[g], beta1[f], beta1[g],
                (lo[f], hi[f]), (lo[g], hi[g]), rem, ftol,
            )
            if res is None:
                continue
            cur = infos[f](values[f]) + infos[g](values[g])
            new = infos[f](res[0]) + infos[g](res[1])
            if new < cur - 1e-12 * (1.0 + abs(cur)):
                values[f], values[g] = res
                improved = True
        if not improved:
            break
    return values


def min_cost_subject_to_threshold(
    model: FittedModel,
    cost: CostFunction,
    bounds,
    threshold: float,
    direction: str = "increase",
) -> np.ndarray:
    """Cheapest package whose predicted outcome meets ``threshold``.

    For an increase goal the constraint is predict(x) >= threshold; for a
    decrease goal, predict(x) <= threshold.  Raises InfeasibleError when no
    package inside the bounds satisfies it.
    """
    _check_direction(direction)
    lo, hi = _bounds_arrays(bounds, model.n_components)
    if cost.max_component >= model.n_components:
        raise ValueError(
            f"cost references component {cost.max_component + 1} but the model "
            f"has {model.n_components} components"
        )
    _check_level_domain(model.link, threshold)
    eta_t = float(link_forward(model.link, threshold))
    if direction == "increase":
        return _min_cost_eta(model.intercept, model.effects, cost, lo, hi, eta_t)
    return _min_cost_eta(-model.intercept, -model.effects, cost, lo, hi, -eta_t)


# ---------------------------------------------------------------------------
# power thresholds
# ---------------------------------------------------------------------------

def _state_summary(trial_state, test: TestSelector | None, k: int) -> ArmSummary:
    records = [rec for rec in trial_state.completed if rec.stage_index < k]
    future = trial_state.future_arm_sizes(k)
    continuous = bool(test is not None and test.continuous_outcome)
    return ArmSummary.from_records(records, future=future, continuous=continuous)


def _threshold_core(model, summary, goals: GoalSpec, cost, bounds):
    """Smallest future outcome level that certifies the power goal.

    Returns (raw_level, eta_work).  Bisects the working linear predictor
    between the control level and the best level attainable in the bounds;
    the passing endpoint is returned, so the certificate always holds at the
    reported level.
    """
    test, alpha, pi = goals.test, goals.alpha, goals.power_goal
    direction = goals.direction
    sign = 1.0 if direction == "increase" else -1.0
    lo, hi = _bounds_arrays(bounds, model.n_components)
    wm = _work_model(model, direction)
    eta_lo = wm.intercept
    _, eta_hi = _eta_extremes(wm, lo, hi)

    def ok(eta_w: float) -> bool:
        raw = _raw_level(model.link, eta_w, direction)
        if test.wald:
            x = min_cost_subject_to_threshold(model, cost, bounds, raw, direction)
            return unconditional_power(x, model, summary, test, alpha) >= pi
        if goals.approach == "unconditional":
            drift = projected_drift_at_level(raw, model, summary)
            if sign * drift <= 0.0:
                return False
            return (
                unconditional_power_at_level(raw, model, summary, test, alpha) >= pi
            )
        slack = conditional_slack_at_level(
            raw, model, summary, test, alpha, pi,
            direction=direction, scale=goals.conditional_scale,
        )
        return slack <= 0.0

    if ok(eta_lo):
        return _raw_level(model.link, eta_lo, direction), eta_lo
    if not ok(eta_hi):
        raise NoThresholdError(
            "the power goal is not certified anywhere inside the bounds"
        )
    for _ in range(60):
        mid = 0.5 * (eta_lo + eta_hi)
        if ok(mid):
            eta_hi = mid
        else:
            eta_lo = mid
    return _raw_level(model.link, eta_hi, direction), eta_hi


def power_threshold(
    model: FittedModel,
    trial_state,
    goals: GoalSpec,
    cost: CostFunction | None = None,
    bounds=None,
) -> float:
    """Outcome level (raw orientation) above which the power goal certifies.

    Uses the completed stages of ``trial_state`` as observed data and the
    remaining planned stages as the future sample.  For the package-df Wald
    test the certificate is evaluated along the cost-minimal package of each
    level, i.e. at the package the recommendation itself would deploy.
    """
    if goals.power_goal is None:
        raise ValueError("goals.power_goal is required")
    cost = cost if cost is not None else trial_state.config.cost
    bounds = bounds if bounds is not None else trial_state.config.bounds
    k_next = len(trial_state.completed) + 1
    summary = _state_summary(trial_state, goals.test, k_next)
    return _threshold_core(model, summary, goals, cost, bounds)[0]


# ---------------------------------------------------------------------------
# recommendation dispatch
# ---------------------------------------------------------------------------

def shrinking_method(model: FittedModel, bounds, stage1_x, outcome_goal: float):
    """Fallback package when even the best level misses the outcome goal.

    Works on the increase orientation (callers mirror first).  Each
    component moves from its stage-1 value toward its upper bound by how
    convincingly its fitted effect approaches the effect size that would be
    needed to reach the goal with every other component at its best bound:
    effects at or below half the needed size leave the component at stage 1,
    effects at or past the needed size move it all the way.
    """
    lo, hi = _bounds_arrays(bounds, model.n_components)
    x1 = np.asarray(stage1_x, dtype=float)
    if x1.size != model.n_components:
        raise ValueError("stage1_x has the wrong number of components")
    _check_level_domain(model.link, outcome_goal, what="outcome_goal")
    g_t = float(link_forward(model.link, outcome_goal))
    b = model.effects
    best = np.maximum(b * lo, b * hi)
    total_best = float(best.sum())
    x = x1.copy()
    for p in range(model.n_components):
        U = hi[p]
        if U <= 0.0:
            continue
        beta_max = (g_t - model.intercept - (total_best - best[p])) / U
        if beta_max <= 0.0:
            continue
        beta_min = 0.5 * beta_max
        if b[p] <= beta_min:
            continue
        frac = min(1.0, (b[p] - beta_min) / (beta_max - beta_min))
        x[p] = x1[p] + frac * (U - x1[p])
    return np.clip(x, lo, hi)


def _recommend_core(
    model: FittedModel,
    summary: ArmSummary | None,
    goals: GoalSpec,
    cost: CostFunction,
    bounds,
    stage1_x,
    allow_shrinking: bool = True,
) -> Recommendation:
    lo, hi = _bounds_arrays(bounds, model.n_components)
    direction = goals.direction
    link = model.link
    wm = _work_model(model, direction)
    _, eta_max_w = _eta_extremes(wm, lo, hi)
    ftol = 1e-9 * max(1.0, abs(eta_max_w))

    eta_goal_w = None
    if goals.outcome_goal is not None:
        _check_level_domain(link, goals.outcome_goal, what="outcome_goal")
        g = float(link_forward(link, goals.outcome_goal))
        eta_goal_w = g if direction == "increase" else -g

    eta_pow_w = None
    pow_attainable = None
    if goals.power_goal is not None:
        if summary is None:
            raise ValueError("a power goal needs observed/planned arm sizes")
        try:
            _, eta_pow_w = _threshold_core(model, summary, goals, cost, bounds)
            pow_attainable = True
        except NoThresholdError:
            pow_attainable = False

    if eta_goal_w is None:
        # Power goal alone: its threshold if one exists, else the best level.
        if pow_attainable:
            eta_eff, regime = eta_pow_w, REGIME_GOAL
        else:
            eta_eff, regime = eta_max_w, REGIME_PMAX
    else:
        if goals.power_goal is None:
            candidate = eta_goal_w
        elif pow_attainable:
            candidate = max(eta_goal_w, eta_pow_w)
        else:
            candidate = math.inf
        if candidate <= eta_max_w + ftol:
            eta_eff, regime = candidate, REGIME_GOAL
        elif eta_goal_w <= eta_max_w + ftol:
            eta_eff, regime = eta_max_w, REGIME_PMAX
        else:
            eta_eff, regime = None, REGIME_SHRINK

    if regime == REGIME_SHRINK:
        if not allow_shrinking:
            raise InfeasibleError(
                "no package inside the bounds reaches the outcome goal"
            )
        if stage1_x is None:
            raise ValueError(
                "the shrinking fallback needs a stage-1 anchor package "
                "(pass stage1_fallback_x)"
            )
        goal_w = float(link_inverse(link, eta_goal_w))
        x = shrinking_method(wm, bounds, stage1_x, goal_w)
        required = float(goals.outcome_goal)
    else:
        x = _min_cost_eta(
            wm.intercept, wm.effects, cost, lo, hi, min(eta_eff, eta_max_w)
        )
        required = _raw_level(link, eta_eff, direction)

    power_val = None
    if goals.power_goal is not None:
        if goals.approach == "conditional":
            power_val = conditional_power(
                x, model, summary, goals.test, goals.alpha, direction=direction
            )
        else:
            power_val = unconditional_power(x, model, summary, goals.test, goals.alpha)

    return Recommendation(
        x_hat=x,
        regime=regime,
        achieved_outcome=predict(model, x),
        required_threshold=required,
        projected_power=power_val,
        cost=float(cost(x)),
    )


def _stage1_anchor(trial_state):
    """Size-weighted mean intervention package of the earliest stage."""
    for rec in sorted(trial_state.completed, key=lambda r: r.stage_index):
        pkgs, sizes = [], []
        for c in rec.centers:
            if c.arm == 1:
                pkgs.append(np.asarray(c.package, dtype=float))
                sizes.append(float(c.size))
        if pkgs:
            w = np.asarray(sizes)
            return np.average(np.vstack(pkgs), axis=0, weights=w)
    return None


def recommend_stage_k(
    model: FittedModel,
    trial_state,
    goals: GoalSpec,
    cost: CostFunction | None = None,
    bounds=None,
    k: int | None = None,
    stage1_fallback_x=None,
) -> Recommendation:
    """Recommendation for stage ``k``: stages below k are observed data,
    stages k..K are the future sample the power projections commit.

    ``model`` should be fitted on the observed stages; refitting is the
    caller's job.  Cost and bounds default to the trial configuration.
    """
    if k is None:
        raise ValueError("k (the stage being planned) is required")
    if k < 2:
        raise ValueError("stage-k recommendations start at k=2; use plan_stage1")
    have = {rec.stage_index for rec in trial_state.completed}
    needed = set(range(1, k))
    if not needed <= have:
        missing = sorted(needed - have)
        raise ValueError(f"stage-{k} recommendation needs completed stages {missing}")
    cost = cost if cost is not None else trial_state.config.cost
    bounds = bounds if bounds is not None else trial_state.config.bounds
    summary = None
    if goals.power_goal is not None:
        summary = _state_summary(trial_state, goals.test, k)
    anchor = stage1_fallback_x
    if anchor is None:
        anchor = _stage1_anchor(trial_state)
    return _recommend_core(model, summary, goals, cost, bounds, anchor)


def recommend(
    model: FittedModel,
    trial_state,
    goals: GoalSpec,
    cost: CostFunction | None = None,
    bounds=None,
    stage1_fallback_x=None,
) -> Recommendation:
    """Recommendation for the next stage of the trial.

    Equivalent to ``recommend_stage_k`` with k = (completed stages) + 1: all
    completed stages count as observed, all remaining planned stages as the
    future sample.
    """
    k = len(trial_state.completed) + 1
    return recommend_stage_k(
        model, trial_state, goals, cost=cost, bounds=bounds, k=k,
        stage1_fallback_x=stage1_fallback_x,
    )


def recommend_from_summary(
    model: FittedModel,
    summary: ArmSummary | None,
    goals: GoalSpec,
    cost: CostFunction,
    bounds,
    stage1_x=None,
) -> Recommendation:
    """Recommendation straight from a fitted model and arm totals.

    For callers who have coefficient estimates and per-arm counts but no
    stage-by-stage trial record — reconstructing a published analysis, for
    instance.  ``summary`` may be None when the goals carry no power goal;
    ``stage1_x`` anchors the shrinking fallback, and without one an
    unreachable outcome goal is simply infeasible.
    """
    return _recommend_core(
        model, summary, goals, cost, bounds, stage1_x,
        allow_shrinking=stage1_x is not None,
    )


def plan_stage1(
    beta0,
    goals: GoalSpec,
    cost: CostFunction,
    bounds,
    planned_sizes,
) -> Recommendation:
    """Pre-trial stage-1 package from assumed coefficients.

    ``beta0`` is the full assumed coefficient vector (intercept first) of a
    logistic outcome model; ``planned_sizes`` gives the planned
    (intervention, control) observation counts, either one pair per stage or
    a single total pair.  Nothing is observed yet, so a power goal is always
    certified with the unconditional formula, and when no package reaches
    the goals the planning fails outright (InfeasibleError) — the shrinking
    fallback needs stage-1 data and has no meaning before the trial.
    """
    beta = np.asarray(beta0, dtype=float).ravel()
    if beta.size < 2:
        raise ValueError("beta0 must hold an intercept and at least one effect")
    model = FittedModel(
        beta=beta,
        link="logit",
        covariance=np.zeros((beta.size, beta.size)),
        n_used=0,
        kind="assumed",
    )
    sizes = np.atleast_2d(np.asarray(planned_sizes, dtype=float))
    if sizes.shape[1] != 2:
        raise ValueError("planned_sizes must be (intervention, control) pairs")
    summary = ArmSummary(
        n1_obs=0.0,
        n0_obs=0.0,
        s1_obs=0.0,
        s0_obs=0.0,
        n1_future=float(sizes[:, 0].sum()),
        n0_future=float(sizes[:, 1].sum()),
        design_obs=(),
    )
    if goals.approach != "unconditional":
        goals = dataclasses.replace(goals, approach="unconditional")
    return _recommend_core(
        model, summary, goals, cost, bounds, stage1_x=None, allow_shrinking=False
    )


# ---------------------------------------------------------------------------
# integer packages
# ---------------------------------------------------------------------------

def integerize(
    x,
    model: FittedModel,
    cost: CostFunction,
    bounds,
    threshold: float,
    direction: str = "increase",
) -> np.ndarray:
    """Round a package to whole units without giving up the threshold.

    Tries every floor/ceil combination (clamped to the integers inside the
    bounds); among combinations still meeting the threshold the cheapest
    wins, and if rounding kills feasibility entirely the best-level
    combination is returned instead.
    """
    _check_direction(direction)
    lo, hi = _bounds_arrays(bounds, model.n_components)
    x = np.asarray(x, dtype=float)
    wm = _work_model(model, direction)
    _check_level_domain(model.link, threshold)
    g = float(link_forward(model.link, threshold))
    eta_t = g if direction == "increase" else -g

    choices = []
    for p in range(x.size):
        lo_int, hi_int = math.ceil(lo[p] - 1e-9), math.floor(hi[p] + 1e-9)
        if lo_int > hi_int:  # no integer in range: keep the fractional value
            choices.append((float(x[p]),))
            continue
        vals = {
            float(min(max(v, lo_int), hi_int))
            for v in (math.floor(x[p]), math.ceil(x[p]))
        }
        choices.append(tuple(sorted(vals)))

    best_feas, best_cost = None, math.inf
    best_any, best_eta = None, -math.inf
    for combo in itertools.product(*choices):
        arr = np.asarray(combo)
        eta = wm.intercept + float(wm.effects @ arr)
        if eta >= eta_t - 1e-9:
            c = float(cost(arr))
            if c < best_cost - 1e-12 or (
                abs(c - best_cost) <= 1e-12 and best_feas is not None
                and tuple(arr) < tuple(best_feas)
            ):
                best_feas, best_cost = arr, c
        if eta > best_eta:
            best_any, best_eta = arr, eta
    return best_feas if best_feas is not None else best_any


# ---------------------------------------------------------------------------
# per-center packages (package-df Wald path)
# ---------------------------------------------------------------------------

def _joint_wald_lambda(model, summary, packages, n1_each):
    P = model.n_components
    info = np.zeros((P + 1, P + 1))
    rows = [
        (np.asarray(pkg, dtype=float), n) for pkg, n in (summary.design_obs or ())
    ]
    rows += [(np.asarray(pkg, dtype=float), n1_each) for pkg in packages]
    rows.append((np.zeros(P), summary.n0_future))
    for pkg, n in rows:
        if n <= 0:
            continue
        z = np.concatenate(([1.0], pkg))
        p = float(link_inverse("logit", model.linear_predictor(pkg)))
        info += n * p * (1.0 - p) * np.outer(z, z)
    schur = info[1:, 1:] - np.outer(info[1:, 0], info[0, 1:]) / info[0, 0]
    return float(model.effects @ schur @ model.effects)


def min_cost_per_center(
    model: FittedModel,
    trial_state,
    goals: GoalSpec,
    n_centers: int,
    cost: CostFunction | None = None,
    bounds=None,
) -> list:
    """Per-center packages for the package-df Wald test.

    Unlike the 1-df tests, the Wald noncentrality rewards spread across the
    future design, so letting centers sit at different packages (all still
    meeting the outcome goal) can certify the power goal more cheaply than
    one shared package.  Block-coordinate descent over centers: each center
    in turn takes the cheapest level whose package keeps the joint
    noncentrality above the power requirement.  Binary outcomes only.
    """
    if n_centers < 1:
        raise ValueError("n_centers must be at least 1")
    if goals.test is None or not goals.test.wald:
        raise ValueError("per-center packages are only defined for the Wald path")
    if goals.test.continuous_outcome or model.link != "logit":
        raise ValueError("per-center packages support the binary Wald path only")
    cost = cost if cost is not None else trial_state.config.cost
    bounds = bounds if bounds is not None else trial_state.config.bounds
    k_next = len(trial_state.completed) + 1
    summary = _state_summary(trial_state, goals.test, k_next)
    anchor = _stage1_anchor(trial_state)
    common = _recommend_core(model, summary, goals, cost, bounds, anchor)
    if goals.power_goal is None or common.regime != REGIME_GOAL:
        return [common.x_hat.copy() for _ in range(n_centers)]

    lo, hi = _bounds_arrays(bounds, model.n_components)
    direction = goals.direction
    wm = _work_model(model, direction)
    _, eta_max_w = _eta_extremes(wm, lo, hi)
    if goals.outcome_goal is not None:
        g = float(link_forward(model.link, goals.outcome_goal))
        eta_floor = g if direction == "increase" else -g
    else:
        eta_floor = wm.intercept
    lam_req = lambda_min(goals.alpha, goals.power_goal, df=model.n_components)
    n1_each = summary.n1_future / n_centers

    def package_at(eta_w):
        return _min_cost_eta(
            wm.intercept, wm.effects, cost, lo, hi, min(eta_w, eta_max_w)
        )

    packages = [common.x_hat.copy() for _ in range(n_centers)]
    total = sum(float(cost(p)) for p in packages)
    for _ in range(20):
        improved = False
        for j in range(n_centers):
            others = packages[:j] + packages[j + 1:]

            def feasible(eta_w):
                cand = package_at(eta_w)
                lam = _joint_wald_lambda(model, summary, others + [cand], n1_each)
                return lam >= lam_req - 1e-9, cand

            ok_hi, cand_hi = feasible(eta_max_w)
            if not ok_hi:
                continue
            eta_lo_j, eta_hi_j, best = eta_floor, eta_max_w, cand_hi
            ok_lo, cand_lo = feasible(eta_lo_j)
            if ok_lo:
                best = cand_lo
            else:
                for _ in range(40):
                    mid = 0.5 * (eta_lo_j + eta_hi_j)
                    ok_mid, cand_mid = feasible(mid)
                    if ok_mid:
                        eta_hi_j, best = mid, cand_mid
                    else:
                        eta_lo_j = mid
            if float(cost(best)) < float(cost(packages[j])) - 1e-9:
                packages[j] = best
                improved = True
        new_total = sum(float(cost(p)) for p in packages)
        if not improved or new_total > total - 1e-9 * (1.0 + abs(total)):
            total = new_total
            break
        total = new_total
    return packages
