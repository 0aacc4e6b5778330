"""Test statistics, special functions, and power-constraint evaluators.

Everything here is pure arithmetic on realized or projected arm summaries:

* distribution functions (normal, central and noncentral chi-square) built
  from documented rational approximations — no external math library;
* the final-analysis statistics (two-proportion z, two-sample t, P-df Wald),
  each in pooled and unpooled variants;
* projected power for a candidate package x under the *unconditional*
  approach (noncentrality of the squared statistic with future-stage sums
  replaced by model projections) and the *conditional* approach (an
  inequality on observed data plus future-stage randomness only; satisfied
  when the returned slack is <= 0).

Conventions: the unconditional constraint uses the two-sided chi-square
rejection event; the conditional constraint uses the one-sided event (the
wrong-sign rejection probability is negligible at any useful power level).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVarianceError, SingularCovarianceError
from .model import FittedModel, link_inverse, link_inverse_deriv, predict

# ---------------------------------------------------------------------------
# normal distribution
# ---------------------------------------------------------------------------
# erfc via W. J. Cody's rational Chebyshev approximations (Math. Comp. 23,
# 1969), the same three-region scheme used by the classic CALERF routine.
# Relative error below 1e-15 in double precision.

_ERF_A = (
    3.16112374387056560e00,
    1.13864154151050156e02,
    3.77485237685302021e02,
    3.20937758913846947e03,
)
_ERF_A5 = 1.85777706184603153e-1
_ERF_B = (
    2.36012909523441209e01,
    2.44024637934444173e02,
    1.28261652607737228e03,
    2.84423683343917062e03,
)
_ERFC_C = (
    5.64188496988670089e-1,
    8.88314979438837594e00,
    6.61191906371416295e01,
    2.98635138197400131e02,
    8.81952221241769090e02,
    1.71204761263407058e03,
    2.05107837782607147e03,
    1.23033935479799725e03,
)
_ERFC_C9 = 2.15311535474403846e-8
_ERFC_D = (
    1.57449261107098347e01,
    1.17693950891312499e02,
    5.37181101862009858e02,
    1.62138957456669019e03,
    3.29079923573345963e03,
    4.36261909014324716e03,
    3.43936767414372164e03,
    1.23033935480374942e03,
)
_ERFC_P = (
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
)
_ERFC_P6 = 1.63153871373020978e-2
_ERFC_Q = (
    2.56852019228982242e00,
    1.87295284992346047e00,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
)
_ONE_OVER_SQRT_PI = 5.6418958354775628695e-1


def _erfc_positive(y: float) -> float:
    """erfc(y) for y >= 0."""
    if y <= 0.46875:
        z = y * y
        num = _ERF_A5 * z
        den = z
        for i in range(3):
            num = (num + _ERF_A[i]) * z
            den = (den + _ERF_B[i]) * z
        return 1.0 - y * (num + _ERF_A[3]) / (den + _ERF_B[3])
    if y <= 4.0:
        num = _ERFC_C9 * y
        den = y
        for i in range(7):
            num = (num + _ERFC_C[i]) * y
            den = (den + _ERFC_D[i]) * y
        return math.exp(-y * y) * (num + _ERFC_C[7]) / (den + _ERFC_D[7])
    if y >= 26.6:
        return 0.0
    z = 1.0 / (y * y)
    num = _ERFC_P6 * z
    den = z
    for i in range(4):
        num = (num + _ERFC_P[i]) * z
        den = (den + _ERFC_Q[i]) * z
    r = z * (num + _ERFC_P[4]) / (den + _ERFC_Q[4])
    return math.exp(-y * y) * (_ONE_OVER_SQRT_PI - r) / y


def erfc(x: float) -> float:
    x = float(x)
    if x < 0.0:
        return 2.0 - _erfc_positive(-x)
    return _erfc_positive(x)


_SQRT2 = math.sqrt(2.0)


def norm_cdf(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * erfc(-float(x) / _SQRT2)


def norm_sf(x: float) -> float:
    """Standard normal upper tail, accurate far in the tail."""
    return 0.5 * erfc(float(x) / _SQRT2)


# Wichura's AS 241 (PPND16): inverse normal CDF to ~1e-16.
_PPND_A = (
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
)
_PPND_B = (
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_PPND_C = (
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
)
_PPND_D = (
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_PPND_E = (
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
)
_PPND_F = (
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _ratpoly(num_coeffs, den_coeffs, r: float) -> float:
    num = num_coeffs[7]
    for c in reversed(num_coeffs[:7]):
        num = num * r + c
    den = den_coeffs[6]
    for c in reversed(den_coeffs[:6]):
        den = den * r + c
    den = den * r + 1.0
    return num / den


def norm_quantile(p: float) -> float:
    """Inverse standard normal CDF (AS 241)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError("norm_quantile needs p strictly inside (0, 1)")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _ratpoly(_PPND_A, _PPND_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        val = _ratpoly(_PPND_C, _PPND_D, r - 1.6)
    else:
        val = _ratpoly(_PPND_E, _PPND_F, r - 5.0)
    return -val if q < 0.0 else val


# ---------------------------------------------------------------------------
# central chi-square via the regularized lower incomplete gamma
# ---------------------------------------------------------------------------

_GAMMA_EPS = 1e-16
_GAMMA_ITMAX = 800


def _gamma_p_series(a: float, x: float) -> float:
    ap = a
    summ = 1.0 / a
    term = summ
    for _ in range(_GAMMA_ITMAX):
        ap += 1.0
        term *= x / ap
        summ += term
        if abs(term) < abs(summ) * _GAMMA_EPS:
            break
    return summ * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz's algorithm for the continued-fraction of Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0.0:
        raise ValueError("gamma_p needs a > 0")
    if x < 0.0:
        raise ValueError("gamma_p needs x >= 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_contfrac(a, x)


def chisq_cdf(x: float, df: float) -> float:
    """Central chi-square CDF."""
    if df <= 0:
        raise ValueError("df must be positive")
    if x <= 0.0:
        return 0.0
    return gamma_p(0.5 * df, 0.5 * x)


def chisq_sf(x: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if x <= 0.0:
        return 1.0
    if x < df + 1.0:
        return 1.0 - _gamma_p_series(0.5 * df, 0.5 * x)
    return _gamma_q_contfrac(0.5 * df, 0.5 * x)


def chisq_quantile(p: float, df: float) -> float:
    """Central chi-square quantile by bisection (robust, ~1e-12)."""
    if not 0.0 < p < 1.0:
        raise ValueError("chisq_quantile needs p strictly inside (0, 1)")
    lo, hi = 0.0, float(df) + 10.0
    while chisq_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e9:
            raise ValueError("chi-square quantile bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chisq_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# noncentral chi-square
# ---------------------------------------------------------------------------

def noncentral_chisq_cdf(x: float, df: float, lam: float) -> float:
    """Noncentral chi-square CDF F(x; df, lam).

    Poisson mixture of central chi-square CDFs, summed outward from the
    largest Poisson weight so large noncentralities stay stable; both tails
    truncated once remaining terms are below 1e-16. Absolute error well
    under 1e-10.
    """
    if df <= 0:
        raise ValueError("df must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    x = float(x)
    if x <= 0.0:
        return 0.0
    half_lam = 0.5 * lam
    if half_lam == 0.0:
        return chisq_cdf(x, df)
    xh = 0.5 * x
    a0 = 0.5 * df
    m = int(half_lam)

    # weight, central term, and CDF-difference term at the starting index
    log_w = m * math.log(half_lam) - half_lam - math.lgamma(m + 1)
    w_start = math.exp(log_w)
    t_start = gamma_p(a0 + m, xh)
    # g(a) = x^a e^{-x} / Gamma(a+1) links successive central CDFs:
    # P(a+1, x) = P(a, x) - g(a)
    log_g = (a0 + m) * math.log(xh) - xh - math.lgamma(a0 + m + 1)
    g_start = math.exp(log_g)

    total = w_start * t_start

    # upward pass: j = m+1, m+2, ...
    w, t, g = w_start, t_start, g_start
    j = m
    for _ in range(200000):
        w *= half_lam / (j + 1)
        t -= g
        if t < 0.0:
            t = 0.0
        g *= xh / (a0 + j + 1)
        j += 1
        term = w * t
        total += term
        if term < 1e-16 and j > m + 2:
            break

    # downward pass: j = m-1, ..., 0. Terms can *grow* toward j = 0 when x
    # is far left of the mass (t_j explodes downward), so stop on the
    # monotonically decreasing Poisson weight, not on the term itself.
    if m > 0:
        w, t = w_start, t_start
        g = g_start * (a0 + m) / xh  # g(a0 + m - 1)
        j = m
        while j > 0:
            w *= j / half_lam
            t += g
            j -= 1
            total += w * t
            if w < 1e-18 and w * t < 1e-16:
                break
            if j > 0:
                g *= (a0 + j) / xh

    return min(max(total, 0.0), 1.0)


def lambda_min(alpha: float, pi: float, df: int = 1) -> float:
    """Smallest noncentrality giving the level-``alpha`` chi-square test power ``pi``.

    Solves 1 - F(chi2_{alpha,df}; df, lam) = pi by bisection on
    lam in [0, 200] (bracket doubled if ever insufficient), tolerance 1e-8.
    """
    if not 0.0 < alpha < 1.0 or not 0.0 < pi < 1.0:
        raise ValueError("alpha and pi must lie in (0, 1)")
    crit = chisq_quantile(1.0 - alpha, df)

    def attained(lam: float) -> float:
        return 1.0 - noncentral_chisq_cdf(crit, df, lam)

    if attained(0.0) >= pi:
        return 0.0
    lo, hi = 0.0, 200.0
    while attained(hi) < pi:
        hi *= 2.0
        if hi > 1e7:
            raise ValueError("power goal unattainable at any noncentrality")
    while hi - lo > 1e-8:
        mid = 0.5 * (lo + hi)
        if attained(mid) < pi:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# test selectors and arm summaries
# ---------------------------------------------------------------------------

TEST_KINDS = (
    "z_unpooled",
    "z_pooled",
    "t_unpooled",
    "t_pooled",
    "wald_pdf_binary",
    "wald_pdf_continuous",
)


@dataclass(frozen=True)
class TestSelector:
    """Which final-analysis test the power goal refers to."""

    kind: str = "z_unpooled"

    def __post_init__(self):
        if self.kind not in TEST_KINDS:
            raise ValueError(f"unknown test kind {self.kind!r}; choose from {TEST_KINDS}")

    @property
    def pooled(self) -> bool:
        return self.kind in ("z_pooled", "t_pooled")

    @property
    def wald(self) -> bool:
        return self.kind.startswith("wald")

    @property
    def continuous_outcome(self) -> bool:
        return self.kind in ("t_unpooled", "t_pooled", "wald_pdf_continuous")

    def df(self, n_components: int = 1) -> int:
        return int(n_components) if self.wald else 1


@dataclass(frozen=True)
class ArmSummary:
    """Per-arm bookkeeping the power formulas need.

    Realized (completed-stage) counts and outcome sums, plus the planned
    future-stage sizes that projections multiply by model-implied rates.
    For continuous outcomes also the completed-stage arm sample variances.
    ``design_obs`` (per-center ``(package, size)`` pairs, zero package for
    control) is only needed by the Wald projections.
    """

    n1_obs: float
    n0_obs: float
    s1_obs: float
    s0_obs: float
    n1_future: float = 0.0
    n0_future: float = 0.0
    var1_obs: float | None = None
    var0_obs: float | None = None
    design_obs: tuple | None = None

    @property
    def N1(self) -> float:
        return self.n1_obs + self.n1_future

    @property
    def N0(self) -> float:
        return self.n0_obs + self.n0_future

    @property
    def mean1_obs(self) -> float:
        return self.s1_obs / self.n1_obs

    @property
    def mean0_obs(self) -> float:
        return self.s0_obs / self.n0_obs

    @classmethod
    def from_records(cls, records, future=(0.0, 0.0), continuous: bool = False):
        """Aggregate stage records; ``future`` is the planned (n1, n0) remainder."""
        n1 = n0 = s1 = s0 = 0.0
        design = []
        y1, y0 = [], []
        for rec in records:
            for c in rec.centers:
                design.append((tuple(float(v) for v in c.package), float(c.size)))
                if c.arm == 1:
                    n1 += c.size
                    s1 += c.outcome_sum
                    y1.append(c.outcomes)
                else:
                    n0 += c.size
                    s0 += c.outcome_sum
                    y0.append(c.outcomes)
        var1 = var0 = None
        if continuous:
            if y1:
                all1 = np.concatenate(y1)
                var1 = float(np.var(all1, ddof=1)) if all1.size > 1 else 0.0
            if y0:
                all0 = np.concatenate(y0)
                var0 = float(np.var(all0, ddof=1)) if all0.size > 1 else 0.0
        return cls(
            n1_obs=n1,
            n0_obs=n0,
            s1_obs=s1,
            s0_obs=s0,
            n1_future=float(future[0]),
            n0_future=float(future[1]),
            var1_obs=var1,
            var0_obs=var0,
            design_obs=tuple(design),
        )


# ---------------------------------------------------------------------------
# realized-data statistics
# ---------------------------------------------------------------------------

def z_statistic(summary: ArmSummary, pooled: bool = False) -> float:
    """Two-proportion z on the realized counts (future sizes ignored)."""
    n1, n0 = summary.n1_obs, summary.n0_obs
    if n1 <= 0 or n0 <= 0:
        raise ValueError("both arms need observations")
    p1 = summary.s1_obs / n1
    p0 = summary.s0_obs / n0
    if pooled:
        pp = (summary.s1_obs + summary.s0_obs) / (n1 + n0)
        var = pp * (1.0 - pp) * (1.0 / n1 + 1.0 / n0)
    else:
        var = p1 * (1.0 - p1) / n1 + p0 * (1.0 - p0) / n0
    if var <= 0.0:
        raise DegenerateVarianceError("zero variance: all outcomes identical")
    return (p1 - p0) / math.sqrt(var)


def t_statistic(summary: ArmSummary, pooled: bool = False) -> float:
    """Two-sample t (normal critical values downstream) on arm means."""
    n1, n0 = summary.n1_obs, summary.n0_obs
    if n1 <= 1 or n0 <= 1:
        raise ValueError("both arms need at least two observations")
    if summary.var1_obs is None or summary.var0_obs is None:
        raise ValueError("t statistic needs arm variance estimates")
    m1, m0 = summary.mean1_obs, summary.mean0_obs
    v1, v0 = summary.var1_obs, summary.var0_obs
    if pooled:
        s2 = ((n1 - 1.0) * v1 + (n0 - 1.0) * v0) / (n1 + n0 - 2.0)
        var = s2 * (1.0 / n1 + 1.0 / n0)
    else:
        var = v1 / n1 + v0 / n0
    if var <= 0.0:
        raise DegenerateVarianceError("zero variance: all outcomes identical")
    return (m1 - m0) / math.sqrt(var)


def wald_statistic(model: FittedModel) -> float:
    """W = beta1' Var(beta1)^{-1} beta1 on the effect block of the covariance."""
    beta1 = model.effects
    cov11 = model.covariance[1:, 1:]
    try:
        sol = np.linalg.solve(cov11, beta1)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("effect-block covariance is singular") from exc
    w = float(beta1 @ sol)
    if not math.isfinite(w):
        raise SingularCovarianceError("effect-block covariance is numerically singular")
    return w


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float
    reject: bool
    kind: str


def final_test(
    summary: ArmSummary,
    test: TestSelector,
    alpha: float = 0.05,
    model: FittedModel | None = None,
) -> TestResult:
    """Run the selected test on complete trial data.

    1-df kinds use two-sided normal p-values with strict rejection
    (|stat| > z_{alpha/2}); Wald kinds use the upper tail of chi-square with
    df = number of package components and need the fitted ``model``.
    """
    if test.wald:
        if model is None:
            raise ValueError("Wald tests need the fitted model")
        w = wald_statistic(model)
        df = model.n_components
        p = chisq_sf(w, df)
        reject = w > chisq_quantile(1.0 - alpha, df)
        return TestResult(statistic=w, df=df, p_value=p, reject=reject, kind=test.kind)
    if test.kind.startswith("z"):
        stat = z_statistic(summary, pooled=test.pooled)
    else:
        stat = t_statistic(summary, pooled=test.pooled)
    p = 2.0 * norm_sf(abs(stat))
    reject = abs(stat) > norm_quantile(1.0 - alpha / 2.0)
    return TestResult(statistic=stat, df=1, p_value=p, reject=reject, kind=test.kind)


# ---------------------------------------------------------------------------
# unconditional projections
# ---------------------------------------------------------------------------

def _sigma1_tilde(level: float, summary: ArmSummary) -> float:
    """Intervention-arm variance projection for t-type tests.

    Blends the observed arm variance with the between-portion shift induced
    by moving the future mean to ``level``.
    """
    if summary.var1_obs is None:
        raise ValueError("continuous projections need var1_obs")
    N1 = summary.N1
    shift = level - summary.mean1_obs
    return (
        (N1 - 2.0) * summary.var1_obs
        + (summary.n1_obs * summary.n1_future / N1) * shift * shift
    ) / (N1 - 1.0)


def _control_level(model: FittedModel) -> float:
    return float(link_inverse(model.link, model.intercept))


def projected_rates(level: float, model: FittedModel, summary: ArmSummary):
    """(pbar1, pbar0): all-stage arm rates/means with the future at ``level``."""
    p0 = _control_level(model)
    pbar1 = (summary.s1_obs + summary.n1_future * level) / summary.N1
    pbar0 = (summary.s0_obs + summary.n0_future * p0) / summary.N0
    return pbar1, pbar0


def lambda_at_level(
    level: float, model: FittedModel, summary: ArmSummary, test: TestSelector
) -> float:
    """Projected noncentrality for 1-df tests as a function of the future
    intervention success probability / mean ``level`` alone."""
    if test.wald:
        raise ValueError("Wald noncentrality depends on the package, not just its level")
    pbar1, pbar0 = projected_rates(level, model, summary)
    if test.continuous_outcome:
        if summary.var0_obs is None:
            raise ValueError("continuous projections need var0_obs")
        den = _sigma1_tilde(level, summary) / summary.N1 + summary.var0_obs / summary.N0
    else:
        den = (
            pbar1 * (1.0 - pbar1) / summary.N1
            + pbar0 * (1.0 - pbar0) / summary.N0
        )
    if den <= 0.0:
        raise DegenerateVarianceError("zero projected variance")
    diff = pbar1 - pbar0
    return diff * diff / den


def _critical_rescale(
    level: float, model: FittedModel, summary: ArmSummary, test: TestSelector
) -> float:
    """Pooled statistics reject against a pooled variance; under the
    alternative the squared statistic is a *scaled* noncentral chi-square, so
    the critical value is rescaled by the pooled/unpooled projected-variance
    ratio."""
    if not test.pooled:
        return 1.0
    N1, N0 = summary.N1, summary.N0
    if test.continuous_outcome:
        st = _sigma1_tilde(level, summary)
        s2 = ((N1 - 1.0) * st + (N0 - 1.0) * summary.var0_obs) / (N1 + N0 - 2.0)
        pooled_var = s2 * (1.0 / N1 + 1.0 / N0)
        unpooled_var = st / N1 + summary.var0_obs / N0
    else:
        pbar1, pbar0 = projected_rates(level, model, summary)
        pp = (summary.s1_obs + summary.n1_future * level
              + summary.s0_obs + summary.n0_future * _control_level(model)) / (N1 + N0)
        pooled_var = pp * (1.0 - pp) * (1.0 / N1 + 1.0 / N0)
        unpooled_var = pbar1 * (1.0 - pbar1) / N1 + pbar0 * (1.0 - pbar0) / N0
    if unpooled_var <= 0.0:
        raise DegenerateVarianceError("zero projected variance")
    return pooled_var / unpooled_var


def _wald_info_binary(x, model: FittedModel, summary: ArmSummary) -> np.ndarray:
    if summary.design_obs is None:
        raise ValueError("Wald projections need design_obs on the summary")
    P = model.n_components
    info = np.zeros((P + 1, P + 1))
    rows = [(np.asarray(pkg, dtype=float), n) for pkg, n in summary.design_obs]
    rows.append((np.asarray(x, dtype=float), summary.n1_future))
    rows.append((np.zeros(P), summary.n0_future))
    for pkg, n in rows:
        if n <= 0:
            continue
        z = np.concatenate(([1.0], pkg))
        p = float(link_inverse("logit", model.linear_predictor(pkg)))
        info += n * p * (1.0 - p) * np.outer(z, z)
    return info


def _wald_sandwich_continuous(x, model: FittedModel, summary: ArmSummary):
    if summary.design_obs is None:
        raise ValueError("Wald projections need design_obs on the summary")
    if summary.var1_obs is None or summary.var0_obs is None:
        raise ValueError("continuous Wald projections need arm variances")
    P = model.n_components
    bread = np.zeros((P + 1, P + 1))
    meat = np.zeros((P + 1, P + 1))
    rows = [(np.asarray(pkg, dtype=float), n) for pkg, n in summary.design_obs]
    rows.append((np.asarray(x, dtype=float), summary.n1_future))
    rows.append((np.zeros(P), summary.n0_future))
    for pkg, n in rows:
        if n <= 0:
            continue
        z = np.concatenate(([1.0], pkg))
        d = float(link_inverse_deriv(model.link, model.linear_predictor(pkg)))
        var = summary.var0_obs if not np.any(pkg) else summary.var1_obs
        zz = np.outer(z, z)
        bread += n * d * d * zz
        meat += n * var * d * d * zz
    return bread, meat


def unconditional_lambda(
    x, model: FittedModel, summary: ArmSummary, test: TestSelector
) -> float:
    """Projected noncentrality of the squared test statistic at package x.

    Future intervention observations sit at the model rate for x, future
    control observations at the model control rate; realized sums enter as
    observed.
    """
    if test.kind == "wald_pdf_binary":
        info = _wald_info_binary(x, model, summary)
        if info[0, 0] <= 0.0:
            raise DegenerateVarianceError("empty projected design")
        schur = info[1:, 1:] - np.outer(info[1:, 0], info[0, 1:]) / info[0, 0]
        return float(model.effects @ schur @ model.effects)
    if test.kind == "wald_pdf_continuous":
        bread, meat = _wald_sandwich_continuous(x, model, summary)
        try:
            bread_inv = np.linalg.inv(bread)
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError("singular projected bread matrix") from exc
        cov = bread_inv @ meat @ bread_inv
        try:
            inv_block = np.linalg.inv(cov[1:, 1:])
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError("singular projected covariance") from exc
        return float(model.effects @ inv_block @ model.effects)
    level = predict(model, x)
    return lambda_at_level(level, model, summary, test)


def unconditional_power_at_level(
    level: float,
    model: FittedModel,
    summary: ArmSummary,
    test: TestSelector,
    alpha: float = 0.05,
) -> float:
    """Projected power of the two-sided test when the future intervention
    rate/mean is ``level`` (1-df kinds only)."""
    lam = lambda_at_level(level, model, summary, test)
    crit = chisq_quantile(1.0 - alpha, 1)
    crit *= _critical_rescale(level, model, summary, test)
    return 1.0 - noncentral_chisq_cdf(crit, 1, lam)


def unconditional_power(
    x,
    model: FittedModel,
    summary: ArmSummary,
    test: TestSelector,
    alpha: float = 0.05,
) -> float:
    """Projected power of the selected test at package x."""
    if test.wald:
        lam = unconditional_lambda(x, model, summary, test)
        df = model.n_components
        crit = chisq_quantile(1.0 - alpha, df)
        return 1.0 - noncentral_chisq_cdf(crit, df, lam)
    return unconditional_power_at_level(predict(model, x), model, summary, test, alpha)


def projected_drift_at_level(
    level: float, model: FittedModel, summary: ArmSummary
) -> float:
    """Signed all-stage arm contrast (intervention minus control) with the
    future intervention rate at ``level``; used for direction coherence."""
    pbar1, pbar0 = projected_rates(level, model, summary)
    return pbar1 - pbar0


# ---------------------------------------------------------------------------
# conditional constraint
# ---------------------------------------------------------------------------

def _conditional_parts(
    level: float, model: FittedModel, summary: ArmSummary, test: TestSelector
):
    """(g1, drift, fut_sd, fut_var) shared by the slack and power forms.

    g1 is the all-data standard error the final statistic divides by, drift
    the projected arm contrast (observed sums fixed, future at model rates),
    and fut_var/fut_sd the variance contributed by future randomness alone.
    """
    if test.wald:
        raise ValueError("the conditional approach is defined for 1-df tests only")
    N1, N0 = summary.N1, summary.N0
    p0 = _control_level(model)
    if test.continuous_outcome:
        st = _sigma1_tilde(level, summary)
        if test.pooled:
            s2 = ((N1 - 1.0) * st + (N0 - 1.0) * summary.var0_obs) / (N1 + N0 - 2.0)
            g1 = math.sqrt(s2 * (1.0 / N1 + 1.0 / N0))
        else:
            g1 = math.sqrt(st / N1 + summary.var0_obs / N0)
        fut_var = (
            summary.n1_future * summary.var1_obs / (N1 * N1)
            + summary.n0_future * summary.var0_obs / (N0 * N0)
        )
    else:
        pbar1, pbar0 = projected_rates(level, model, summary)
        if test.pooled:
            pp = (summary.s1_obs + summary.n1_future * level
                  + summary.s0_obs + summary.n0_future * p0) / (N1 + N0)
            g1 = math.sqrt(max(pp * (1.0 - pp) * (1.0 / N1 + 1.0 / N0), 0.0))
        else:
            g1 = math.sqrt(
                max(pbar1 * (1.0 - pbar1) / N1 + pbar0 * (1.0 - pbar0) / N0, 0.0)
            )
        fut_var = (
            summary.n1_future * level * (1.0 - level) / (N1 * N1)
            + summary.n0_future * p0 * (1.0 - p0) / (N0 * N0)
        )

    delta_future = summary.n1_future * level / N1 - summary.n0_future * p0 / N0
    drift = summary.s1_obs / N1 - summary.s0_obs / N0 + delta_future
    return g1, drift, math.sqrt(max(fut_var, 0.0)), fut_var


def _direction_sign(direction: str) -> float:
    if direction not in ("increase", "decrease"):
        raise ValueError("direction must be 'increase' or 'decrease'")
    return 1.0 if direction == "increase" else -1.0


def conditional_slack_at_level(
    level: float,
    model: FittedModel,
    summary: ArmSummary,
    test: TestSelector,
    alpha: float,
    pi: float,
    direction: str = "increase",
    scale: str = "sd",
) -> float:
    """Left side of the conditional power inequality; satisfied iff <= 0.

    Conditions on the realized sums and treats only future-stage outcomes as
    random. ``scale`` picks the standardization of the future-randomness
    term: ``"sd"`` (default, the standardization the construction actually
    uses) or ``"variance"`` (the printed form of the plain-z inequality,
    kept for comparability).
    """
    sign = _direction_sign(direction)
    z_half_alpha = norm_quantile(1.0 - alpha / 2.0)
    z_pi = norm_quantile(1.0 - pi)  # upper-pi critical value, negative for pi > 1/2
    g1, drift, fut_sd, fut_var = _conditional_parts(level, model, summary, test)
    if scale == "variance" and test.kind == "z_unpooled":
        fut_term = fut_var
    elif scale in ("sd", "variance"):
        fut_term = fut_sd
    else:
        raise ValueError("scale must be 'sd' or 'variance'")
    return z_half_alpha * g1 - sign * drift - z_pi * fut_term


def conditional_constraint_slack(
    x,
    model: FittedModel,
    summary: ArmSummary,
    test: TestSelector,
    alpha: float,
    pi: float,
    direction: str = "increase",
    scale: str = "sd",
) -> float:
    """Conditional power slack at package x (<= 0 means the goal is met)."""
    level = predict(model, x)
    return conditional_slack_at_level(
        level, model, summary, test, alpha, pi, direction=direction, scale=scale
    )


def conditional_power_at_level(
    level: float,
    model: FittedModel,
    summary: ArmSummary,
    test: TestSelector,
    alpha: float = 0.05,
    direction: str = "increase",
) -> float:
    """Probability of the correct-direction rejection given the observed sums.

    This is the quantity the slack form bounds: it is >= pi exactly when
    ``conditional_slack_at_level(...) <= 0`` (with the default sd scale).
    """
    sign = _direction_sign(direction)
    z_half_alpha = norm_quantile(1.0 - alpha / 2.0)
    g1, drift, fut_sd, _ = _conditional_parts(level, model, summary, test)
    margin = sign * drift - z_half_alpha * g1
    if fut_sd == 0.0:
        return 1.0 if margin >= 0.0 else 0.0
    return norm_cdf(margin / fut_sd)


def conditional_power(
    x,
    model: FittedModel,
    summary: ArmSummary,
    test: TestSelector,
    alpha: float = 0.05,
    direction: str = "increase",
) -> float:
    """Conditional projected power at package x."""
    level = predict(model, x)
    return conditional_power_at_level(
        level, model, summary, test, alpha=alpha, direction=direction
    )
