"""Distribution analysis of true-vote counts.

Vote counts per package are compared against a binomial model (independent
models, one shared success rate) and a beta-binomial model (success rate
varying across packages). The ratio of observed to binomial variance gives the
design effect, from which the effective number of independent models and the
intra-class correlation follow.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ContractError, DegenerateDataError, EmptyDataError, InsufficientCellsError
from .ensemble import VoteTable

DEFAULT_ALPHA = 0.001
MIN_EXPECTED = 5.0
_EPS = 1e-15
_FPMIN = 1e-300


@dataclass(frozen=True)
class VoteHistogram:
    n: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != self.n + 1:
            raise ContractError(f"histogram for n={self.n} needs {self.n + 1} cells")
        if any(c < 0 for c in self.counts):
            raise ContractError("negative histogram count")

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def mean(self) -> float:
        return sum(k * c for k, c in enumerate(self.counts)) / self.N

    @property
    def variance(self) -> float:
        """Population variance of the true-vote count."""
        m = self.mean
        return sum(c * (k - m) ** 2 for k, c in enumerate(self.counts)) / self.N


def histogram(table: VoteTable) -> VoteHistogram:
    if not table.rows:
        raise EmptyDataError("vote table is empty")
    counts = [0] * (table.n + 1)
    for p, cells in table.rows.items():
        if any(v is None for v in cells):
            raise ContractError(f"row {p!r} has empty cells; filter the table first")
        counts[sum(cells)] += 1
    return VoteHistogram(table.n, tuple(counts))


# -- binomial ---------------------------------------------------------------


@dataclass(frozen=True)
class BinomialFit:
    p_hat: float


def binomial_probs(n: int, p: float) -> list[float]:
    return [math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1)]


def fit_binomial(hist: VoteHistogram) -> BinomialFit:
    if hist.N <= 0:
        raise EmptyDataError("histogram is empty")
    return BinomialFit(hist.mean / hist.n)


# -- beta-binomial ----------------------------------------------------------


@dataclass(frozen=True)
class BetaBinomialFit:
    alpha: float
    beta: float
    log_likelihood: float
    converged: bool
    iterations: int = 0


def _betaln(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def betabinom_logpmf(k: int, n: int, alpha: float, beta: float) -> float:
    log_comb = math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    return log_comb + _betaln(k + alpha, n - k + beta) - _betaln(alpha, beta)


def betabinom_probs(n: int, alpha: float, beta: float) -> list[float]:
    return [math.exp(betabinom_logpmf(k, n, alpha, beta)) for k in range(n + 1)]


def betabinom_loglik(hist: VoteHistogram, alpha: float, beta: float) -> float:
    return sum(
        c * betabinom_logpmf(k, hist.n, alpha, beta) for k, c in enumerate(hist.counts) if c
    )


def moment_start(hist: VoteHistogram) -> tuple[float, float]:
    """Method-of-moments (alpha, beta); falls back to a near-binomial start."""
    n = hist.n
    pi = hist.mean / n
    ratio = hist.variance / (n * pi * (1 - pi))
    s = (n - ratio) / (ratio - 1) if ratio > 1 else 100.0
    if not math.isfinite(s) or s <= 0:
        s = 100.0
    return max(pi * s, 1e-3), max((1 - pi) * s, 1e-3)


def fit_betabinomial(
    hist: VoteHistogram, tol: float = 1e-10, max_iter: int = 500
) -> BetaBinomialFit:
    """Maximum-likelihood beta-binomial fit by Nelder-Mead in log-parameter space."""
    if hist.N < 2:
        raise EmptyDataError("beta-binomial fit needs at least two packages")
    if hist.variance == 0:
        p = hist.mean / hist.n
        raise DegenerateDataError(
            f"zero-variance histogram; binomial with p={p:g} describes it exactly"
        )

    def nll(x):
        a, b = np.exp(np.clip(x, -30.0, 30.0))
        return -betabinom_loglik(hist, float(a), float(b))

    start = np.log(moment_start(hist))
    res = minimize(
        nll,
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": tol, "maxiter": max_iter},
    )
    a, b = (float(v) for v in np.exp(np.clip(res.x, -30.0, 30.0)))
    return BetaBinomialFit(a, b, -float(res.fun), bool(res.success), int(res.nit))


# -- chi-squared ------------------------------------------------------------


def _gamma_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cont_frac(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cont_frac(a, x)


def chi2_cdf(x: float, df: int) -> float:
    return gammainc_lower(df / 2.0, x / 2.0)


def chi2_sf(x: float, df: int) -> float:
    return gammainc_upper(df / 2.0, x / 2.0)


def chi2_critical(alpha_level: float, df: int, tol: float = 1e-10) -> float:
    """Upper-tail critical value: the x with P(X > x) = alpha_level."""
    if not 0 < alpha_level < 1:
        raise ContractError("alpha_level must be in (0, 1)")
    if df < 1:
        raise ContractError("df must be >= 1")
    lo, hi = 0.0, float(df)
    while chi2_sf(hi, df) > alpha_level:
        lo, hi = hi, hi * 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_sf(mid, df) > alpha_level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GofResult:
    chi2: float
    df: int
    p_value: float
    alpha_level: float
    critical_value: float
    rejected: bool
    merged_cells: list[list[int]]
    n_estimated_params: int
    observed: list[float] = field(default_factory=list)
    expected: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def merge_cells(observed, expected, min_expected: float = MIN_EXPECTED):
    """Merge adjacent cells until every expected count reaches ``min_expected``.

    The highest-k deficient cell is always merged first, into its lower
    neighbour (cell 0 merges upward), so a sparse upper tail collapses from
    the top inward.
    """
    groups = [[k] for k in range(len(observed))]
    obs = [float(o) for o in observed]
    exp = [float(e) for e in expected]
    while len(groups) > 1:
        low = [i for i, e in enumerate(exp) if e < min_expected]
        if not low:
            break
        i = low[-1]
        j = i - 1 if i > 0 else 1
        a, b = min(i, j), max(i, j)
        groups[a:b + 1] = [groups[a] + groups[b]]
        obs[a:b + 1] = [obs[a] + obs[b]]
        exp[a:b + 1] = [exp[a] + exp[b]]
    return groups, obs, exp


def chi2_gof(
    hist: VoteHistogram,
    expected_probs,
    n_estimated_params: int,
    alpha_level: float = DEFAULT_ALPHA,
) -> GofResult:
    probs = [float(p) for p in expected_probs]
    if len(probs) != len(hist.counts):
        raise ContractError("expected_probs must have one entry per histogram cell")
    if abs(sum(probs) - 1.0) > 1e-9:
        raise ContractError(f"expected probabilities sum to {sum(probs)!r}, not 1")
    N = hist.N
    groups, obs, exp = merge_cells(hist.counts, [N * p for p in probs])
    df = len(groups) - 1 - n_estimated_params
    if df < 1:
        raise InsufficientCellsError(
            f"{len(groups)} cells after merging leave df={df} with {n_estimated_params} parameters"
        )
    stat = sum((o - e) ** 2 / e for o, e in zip(obs, exp) if e > 0)
    critical = chi2_critical(alpha_level, df)
    return GofResult(
        chi2=stat,
        df=df,
        p_value=chi2_sf(stat, df),
        alpha_level=alpha_level,
        critical_value=critical,
        rejected=stat > critical,
        merged_cells=groups,
        n_estimated_params=n_estimated_params,
        observed=obs,
        expected=exp,
    )


# -- design effect ----------------------------------------------------------


@dataclass(frozen=True)
class DesignEffectReport:
    n: int
    var_obs: float
    var_ind: float
    deff: float
    n_eff: float
    rho: float

    def to_json(self) -> dict:
        return asdict(self)


def design_effect_from_moments(var_obs: float, n: int, p_hat: float) -> DesignEffectReport:
    if n < 2:
        raise ContractError("design effect needs n >= 2")
    var_ind = n * p_hat * (1 - p_hat)
    if var_ind <= 0:
        raise DegenerateDataError(f"p_hat={p_hat} gives zero binomial variance")
    deff = var_obs / var_ind
    return DesignEffectReport(n, var_obs, var_ind, deff, n / deff if deff else math.inf, (deff - 1) / (n - 1))


def design_effect(hist: VoteHistogram, fit: BinomialFit) -> DesignEffectReport:
    return design_effect_from_moments(hist.variance, hist.n, fit.p_hat)


def neff_curve(n: int, rho: float) -> float:
    """Effective number of independent models among n with correlation rho."""
    if n < 1 or not 0 <= rho <= 1:
        raise ContractError("need n >= 1 and 0 <= rho <= 1")
    return n / (1 + (n - 1) * rho)


# -- report -----------------------------------------------------------------


def analyze(table: VoteTable, alpha_level: float = DEFAULT_ALPHA) -> dict:
    """Full statistics report for a complete vote table, as a JSON-ready dict."""
    hist = histogram(table)
    binom = fit_binomial(hist)
    report: dict = {
        "histogram": {"n": hist.n, "counts": list(hist.counts), "N": hist.N},
        "binomial": {"p_hat": binom.p_hat},
    }
    report["binomial_gof"] = _safe_gof(hist, binomial_probs(hist.n, binom.p_hat), 1, alpha_level)
    try:
        bb = fit_betabinomial(hist)
        report["betabinomial"] = asdict(bb)
        report["betabinomial_gof"] = _safe_gof(
            hist, betabinom_probs(hist.n, bb.alpha, bb.beta), 2, alpha_level
        )
    except DegenerateDataError as exc:
        report["betabinomial"] = {"error": str(exc)}
        report["betabinomial_gof"] = {"error": str(exc)}
    try:
        report["design_effect"] = design_effect(hist, binom).to_json()
    except (DegenerateDataError, ContractError) as exc:
        report["design_effect"] = {"error": str(exc)}
    return report


def _safe_gof(hist, probs, n_params, alpha_level):
    total = sum(probs)
    probs = [p / total for p in probs]
    try:
        return chi2_gof(hist, probs, n_params, alpha_level).to_json()
    except InsufficientCellsError as exc:
        return {"error": str(exc)}
