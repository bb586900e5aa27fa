"""Ergodicity classification of Markov operators.

An operator is uniformly asymptotically stable exactly when some power
contracts the null space of f (``delta(T^n0) < 1``), and uniformly mean
ergodic exactly when some Cesaro average does. This module searches for
such powers and averages, builds a certified geometric envelope for the
convergence of ``T^n`` to the rank-one limit, and finds fixed points.

On the classical space every delta is exact. Elsewhere the sampled delta
is only a lower bound, so contraction is certified through an attested
upper bound on ``delta(T)`` (argument ``delta_upper`` or the operator's
own ``delta_upper``) together with submultiplicativity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificationError, NoFixedPointError, PreconditionError
from .operators import (
    MarkovOperator,
    _require_validated,
    delta_coefficient,
    operator_norm,
    rank_one_matrix,
)
from .spaces import Element

UAS = "UniformlyAsymptoticallyStable"
UME_ONLY = "UniformlyMeanErgodicOnly"
UNDETERMINED = "Undetermined"

DEFAULT_THRESHOLD = 1.0 - 1e-6
DEFAULT_N_MAX = 512
DEFAULT_N_CHECK = 256


def _attested(T: MarkovOperator, delta_upper):
    if delta_upper is not None:
        return float(delta_upper)
    return T.delta_upper


def _delta(matrix, space, budget, seed):
    samples = 0 if space.exact else budget
    return delta_coefficient(matrix, space, budget=budget, seed=seed, samples=samples).value


def find_contractive_power(T: MarkovOperator, n_max: int = DEFAULT_N_MAX,
                           threshold: float = DEFAULT_THRESHOLD,
                           delta_upper: float | None = None):
    """Smallest ``n0 <= n_max`` with ``delta(T^n0) <= threshold``.

    Returns ``(n0, rho)`` with ``rho`` a certified upper bound on
    ``delta(T^n0)``, or ``None`` when no power up to ``n_max`` can be
    certified. ``None`` does not prove that ``T`` fails to be ergodic.
    """
    _require_validated(T)
    if T.space.exact:
        P = np.eye(T.space.dim)
        for n in range(1, n_max + 1):
            P = P @ T.matrix
            d = _delta(P, T.space, 0, 0)
            if d <= threshold:
                return n, d
        return None
    ub = _attested(T, delta_upper)
    if ub is None:
        return None
    for n in range(1, n_max + 1):
        if ub ** n <= threshold:
            return n, ub ** n
    return None


def find_mean_contractive(T: MarkovOperator, n_max: int = DEFAULT_N_MAX,
                          threshold: float = DEFAULT_THRESHOLD,
                          delta_upper: float | None = None):
    """Smallest ``n0 <= n_max`` with ``delta(A_n0(T)) <= threshold``.

    Off the classical space the certified value is the average
    ``(1/n) sum_{k<n} ub^k`` of the attested bound, since delta is
    subadditive and submultiplicative.
    """
    _require_validated(T)
    if T.space.exact:
        dim = T.space.dim
        pk, acc = np.eye(dim), np.zeros((dim, dim))
        for n in range(1, n_max + 1):
            acc += pk
            pk = pk @ T.matrix
            d = _delta(acc / n, T.space, 0, 0)
            if d <= threshold:
                return n, d
        return None
    ub = _attested(T, delta_upper)
    if ub is None:
        return None
    total = 0.0
    for n in range(1, n_max + 1):
        total += ub ** (n - 1)
        if total / n <= threshold:
            return n, total / n
    return None


def n_tilde(C: float, alpha: float) -> int:
    """Smallest ``n >= 0`` with ``C exp(-alpha n) <= 1``."""
    if math.isinf(alpha) or C <= 1.0:
        return 0
    # guard against ceil of an integer computed with rounding error
    return max(0, math.ceil(math.log(C) / alpha - 1e-9))


def geometric_envelope(n0: int, rho: float, scale: float = 2.0):
    """Constants ``(C, alpha, n_tilde)`` of a geometric envelope.

    From ``delta(T^n0) <= rho`` and submultiplicativity,
    ``delta(T^n) <= rho^floor(n/n0) <= (1/rho) (rho^(1/n0))^n``. Since
    ``||T^n - T_x0|| <= 2 delta(T^n)``, ``scale=2`` (default) gives an
    envelope for the operator-norm distance to the rank-one limit, while
    ``scale=1`` gives the envelope for ``delta(T^n)`` itself.

    ``C = scale / rho``, ``alpha = ln(1/rho) / n0`` and ``n_tilde`` is the
    first ``n`` with ``C exp(-alpha n) <= 1``. ``rho = 0`` returns
    ``(1, inf, n0)``.
    """
    if n0 < 1 or not 0.0 <= rho < 1.0:
        raise PreconditionError("need n0 >= 1 and 0 <= rho < 1")
    if rho == 0.0:
        return 1.0, math.inf, n0
    C = scale / rho
    alpha = math.log(1.0 / rho) / n0
    return C, alpha, n_tilde(C, alpha)


def envelope_value(C: float, alpha: float, n: int) -> float:
    if math.isinf(alpha):
        return C if n == 0 else 0.0
    return C * math.exp(-alpha * n)


def _residual(T, x):
    return float(T.space.norm(T.matrix @ x - x))


def _linear_fixed_point(T):
    space = T.space
    lhs = np.vstack([T.matrix - np.eye(space.dim), space.f_vector])
    rhs = np.zeros(space.dim + 1)
    rhs[-1] = 1.0
    x, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return x


def fixed_point(T: MarkovOperator, tol: float = 1e-12, iter_max: int = 64,
                start: Element | None = None) -> Element:
    """A state ``x0`` with ``||T x0 - x0|| <= tol``.

    Iterates ``x <- A_{2^k}(T) x`` from the barycenter of the base, using
    ``A_{2m} = (I + T^m) A_m / 2``, and falls back to a least-squares solve
    of ``(T - I) x = 0, f(x) = 1`` when the iteration stalls.
    """
    _require_validated(T)
    space = T.space
    x = space.barycenter() if start is None else np.array(start.coords, dtype=float)
    P = T.matrix.copy()
    best_x, best_r = x, _residual(T, x)
    extra = 0
    for _ in range(iter_max):
        if best_r <= tol:
            # a few more doublings usually push the residual to rounding level
            extra += 1
            if extra > 3 or best_r == 0.0:
                break
        x = 0.5 * (x + P @ x)
        x = x / space.f(x)
        P = P @ P
        r = _residual(T, x)
        if r < best_r:
            best_x, best_r = x, r
    if best_r <= tol:
        return Element(space, best_x)
    x = _linear_fixed_point(T)
    r = _residual(T, x)
    if r <= tol and bool(space.contains(x)):
        return Element(space, x)
    raise NoFixedPointError(
        f"no certified fixed point: iteration residual {best_r:.3e}, linear solve residual {r:.3e}"
    )


def distance_to_limit(P, x0, space, budget: int = 16, seed: int = 0) -> float:
    """``||P - T_x0||`` for a raw matrix ``P``."""
    return operator_norm(P - rank_one_matrix(x0, space), space, budget=budget, seed=seed)


@dataclass
class ErgodicityReport:
    classification: str
    n0: int | None = None
    rho: float | None = None
    mean_n0: int | None = None
    mean_rho: float | None = None
    C: float | None = None
    alpha: float | None = None
    n_tilde: int | None = None
    fixed_point: Element | None = None
    fixed_point_residual: float | None = None
    n_max_searched: int = 0
    envelope_slack: float | None = None
    tail_gap: float | None = None
    fitted_envelope: tuple | None = None
    delta_upper_attested: float | None = None
    certified: bool = True
    traces: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = {
            "classification": self.classification,
            "n0": self.n0,
            "rho": self.rho,
            "mean_n0": self.mean_n0,
            "mean_rho": self.mean_rho,
            "C": self.C,
            "alpha": None if self.alpha is None or math.isinf(self.alpha) else self.alpha,
            "alpha_infinite": self.alpha is not None and math.isinf(self.alpha),
            "n_tilde": self.n_tilde,
            "fixed_point": None if self.fixed_point is None else self.fixed_point.coords.tolist(),
            "fixed_point_residual": self.fixed_point_residual,
            "n_max_searched": self.n_max_searched,
            "envelope_slack": self.envelope_slack,
            "tail_gap": self.tail_gap,
            "fitted_envelope": self.fitted_envelope,
            "certified": self.certified,
            "traces": self.traces,
        }
        if self.delta_upper_attested is not None:
            out["delta_upper_attested"] = self.delta_upper_attested
        return out


def _fit_envelope(ns, gaps):
    # least-squares line through log gaps; reporting only, never used in bounds
    ns, gaps = np.asarray(ns, float), np.asarray(gaps, float)
    keep = gaps > 1e-14
    if keep.sum() < 2:
        return None
    slope, intercept = np.polyfit(ns[keep], np.log(gaps[keep]), 1)
    return float(math.exp(intercept)), float(-slope)


def classify(T: MarkovOperator, n_max: int = DEFAULT_N_MAX, n_check: int = DEFAULT_N_CHECK,
             threshold: float = DEFAULT_THRESHOLD, tol: float = 1e-12,
             delta_upper: float | None = None, budget: int = 16, seed: int = 0,
             traces: bool = True) -> ErgodicityReport:
    """Classify ``T`` as uniformly asymptotically stable, mean ergodic only, or undetermined.

    For a stable operator the envelope ``||T^n - T_x0|| <= C exp(-alpha n)``
    is checked empirically for ``n_tilde <= n <= n_check`` and the worst
    ``gap - envelope`` is stored in ``envelope_slack`` (negative means the
    envelope held with room to spare).
    """
    _require_validated(T)
    space = T.space
    attested = None if space.exact else _attested(T, delta_upper)
    report = ErgodicityReport(UNDETERMINED, n_max_searched=n_max,
                              delta_upper_attested=attested, certified=space.exact or attested is not None)

    found = find_contractive_power(T, n_max, threshold, delta_upper)
    mean = None
    if found is None:
        mean = find_mean_contractive(T, n_max, threshold, delta_upper)
    else:
        report.classification = UAS
        report.n0, report.rho = found
        report.C, report.alpha, report.n_tilde = geometric_envelope(*found)
    if mean is not None:
        report.classification = UME_ONLY
        report.mean_n0, report.mean_rho = mean
    if report.classification == UNDETERMINED:
        if traces:
            report.traces = _traces(T, None, min(n_check, n_max), budget, seed)
        return report

    x0 = fixed_point(T, tol)
    report.fixed_point = x0
    report.fixed_point_residual = _residual(T, x0.coords)
    rows = _traces(T, x0.coords, n_check, budget, seed) if traces else []
    report.traces = rows

    if report.classification == UAS:
        slack = -math.inf
        ns, gaps = [], []
        P = np.linalg.matrix_power(T.matrix, report.n_tilde) if report.n_tilde else np.eye(space.dim)
        gap_by_n = {r["n"]: r["norm_gap"] for r in rows}
        for n in range(report.n_tilde, n_check + 1):
            if n in gap_by_n:
                gap = gap_by_n[n]
            else:
                gap = distance_to_limit(P, x0.coords, space, budget, seed)
            slack = max(slack, gap - envelope_value(report.C, report.alpha, n))
            ns.append(n)
            gaps.append(gap)
            P = P @ T.matrix
        report.envelope_slack = None if math.isinf(slack) else slack
        report.fitted_envelope = _fit_envelope(ns, gaps)
    else:
        tail = [r["mean_gap"] for r in rows if r["n"] >= max(1, n_check // 2)]
        report.tail_gap = max(tail) if tail else None
    return report


def _traces(T, x0, horizon, budget, seed):
    space = T.space
    rows = []
    lim = None if x0 is None else rank_one_matrix(x0, space)
    for n, P, A in _powers_and_averages(T.matrix, horizon):
        row = {
            "n": n,
            "delta_Tn": _delta(P, space, budget, seed),
            "delta_An": _delta(A, space, budget, seed),
        }
        if lim is not None:
            row["norm_gap"] = operator_norm(P - lim, space, budget=budget, seed=seed)
            row["mean_gap"] = operator_norm(A - lim, space, budget=budget, seed=seed)
        rows.append(row)
    return rows


def _powers_and_averages(matrix, horizon):
    dim = matrix.shape[0]
    pk, acc = np.eye(dim), np.zeros((dim, dim))
    for n in range(1, horizon + 1):
        acc += pk
        pk = pk @ matrix
        yield n, pk, acc / n


def openness_radius(T: MarkovOperator, n: int, delta_upper: float | None = None) -> float:
    """Radius ``2 (1 - delta(A_n(T))) / (n + 1)`` of a mean-ergodic neighbourhood.

    Every Markov ``H`` with ``||H - T||`` below the radius has
    ``delta(A_n(H)) < 1``.
    """
    _require_validated(T)
    if n < 1:
        raise PreconditionError("n must be >= 1")
    if T.space.exact:
        A = sum(np.linalg.matrix_power(T.matrix, k) for k in range(n)) / n
        d = _delta(A, T.space, 0, 0)
    else:
        ub = _attested(T, delta_upper)
        if ub is None:
            raise CertificationError("openness radius needs a certified delta on this space")
        d = sum(ub ** k for k in range(n)) / n
    if d >= 1.0 - 1e-12:
        raise PreconditionError(f"delta(A_{n}(T)) = {d:.6g} is not below 1")
    return 2.0 * (1.0 - d) / (n + 1)
