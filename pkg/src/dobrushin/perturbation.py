"""Perturbation bounds for uniformly asymptotically stable Markov chains.

Given an ideal chain ``T`` and a perturbed chain ``S`` on the same space,
the functions here evaluate upper bounds on the trajectory distance
``||T^n x - S^n z||`` and on the distance between stationary states, and
compare them against the actual distances.

Naming follows the equation labels used in reports:

* ``eq1``, ``eq5``, ``eq6`` -- rate-based, from an envelope ``(C, alpha)``
* ``eq7``, ``eq8``, ``eq9`` -- from ``delta(T^m)``
* ``eq12``, ``eq14`` -- floor-based, from ``delta(T^m)^floor(n/m)``
* ``per62`` -- stationary distance under the stability transfer

Every trajectory bound is affine in ``||x - z||``; the ``*_coeffs``
helpers return the pair ``(slope, offset)`` so a bound can be evaluated
for many start pairs at once.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import ergodicity
from .errors import CertificationError, MalformedError, NumericalFailure, PreconditionError
from .operators import MarkovOperator, _require_validated, delta_coefficient, operator_norm
from .spaces import Element, extreme_points, functional_f

SOUNDNESS_TOL = 1e-8


# -- rate-based bounds ----------------------------------------------------

def _check_rate(C, alpha):
    if not alpha > 0:
        raise PreconditionError("alpha must be positive")
    if not C > 0:
        raise PreconditionError("C must be positive")


def _resolve_n_tilde(C, alpha, n_tilde):
    if n_tilde is not None:
        return n_tilde
    if math.isinf(alpha):
        raise PreconditionError("pass n_tilde explicitly when alpha is infinite")
    return ergodicity.n_tilde(C, alpha)


def rate_coefficient(C: float, alpha: float, n_tilde: int | None = None) -> float:
    """``n_tilde + C exp(-alpha n_tilde) / (1 - exp(-alpha))``."""
    _check_rate(C, alpha)
    nt = _resolve_n_tilde(C, alpha, n_tilde)
    return nt + C * math.exp(-alpha * nt) / (1.0 - math.exp(-alpha))


def rate_coeffs(C, alpha, norm_TS, n, n_tilde=None):
    _check_rate(C, alpha)
    nt = _resolve_n_tilde(C, alpha, n_tilde)
    if n <= nt:
        return 1.0, n * norm_TS
    decay = math.exp(-alpha * n)
    tail = C * (math.exp(-alpha * nt) - decay) / (1.0 - math.exp(-alpha))
    return C * decay, (nt + tail) * norm_TS


def bound_rate_based(C: float, alpha: float, norm_TS: float, dist_xz: float, n: int,
                     n_tilde: int | None = None) -> float:
    """Trajectory bound from the envelope ``||T^n - T_x0|| <= C exp(-alpha n)``.

    For ``n <= n_tilde`` this is ``dist + n ||T - S||``; beyond, the
    envelope takes over.

    >>> round(bound_rate_based(1.0, math.log(2), 0.0, 1.0, 3), 6)
    0.125
    """
    a, b = rate_coeffs(C, alpha, norm_TS, n, n_tilde)
    return a * dist_xz + b


def bound_eq5(C: float, alpha: float, norm_TS: float, dist_xz: float,
              n_tilde: int | None = None) -> float:
    return dist_xz + rate_coefficient(C, alpha, n_tilde) * norm_TS


def bound_eq6(C: float, alpha: float, norm_TS: float, n_tilde: int | None = None) -> float:
    return rate_coefficient(C, alpha, n_tilde) * norm_TS


# -- delta-based bounds ---------------------------------------------------

def _check_delta(delta_Tm, m=1):
    if m < 1:
        raise PreconditionError("m must be >= 1")
    if not 0.0 <= delta_Tm < 1.0:
        raise PreconditionError(f"delta(T^m) = {delta_Tm} must lie in [0, 1)")


def delta_coeffs(m, delta_Tm, max_power_gap, norm_TmSm, n):
    _check_delta(delta_Tm, m)
    if n < m:
        return 1.0, max_power_gap
    return delta_Tm, delta_Tm * max_power_gap + norm_TmSm / (1.0 - delta_Tm)


def bound_delta_based(m: int, delta_Tm: float, dist_xz: float, max_power_gap: float,
                      norm_TmSm: float, n: int) -> float:
    """Two-case trajectory bound with a single ``delta(T^m)`` prefactor.

    ``n < m`` gives ``dist + max_{0<i<m} ||T^i - S^i||``; ``n >= m`` gives
    ``delta (dist + gap) + ||T^m - S^m|| / (1 - delta)``. At ``n = m`` only
    the second case is a valid bound.
    """
    a, b = delta_coeffs(m, delta_Tm, max_power_gap, norm_TmSm, n)
    return a * dist_xz + b


def bound_eq7(delta_Tm: float, dist_xz: float, norm_TmSm: float) -> float:
    """Bound on ``sup_{k>=1} ||T^{km} x - S^{km} z||``."""
    _check_delta(delta_Tm)
    return delta_Tm * dist_xz + norm_TmSm / (1.0 - delta_Tm)


def bound_eq9(delta_Tm: float, norm_TmSm: float) -> float:
    _check_delta(delta_Tm)
    return norm_TmSm / (1.0 - delta_Tm)


# -- floor-based bounds ---------------------------------------------------

def floor_coeffs(m, delta_Tm, max_power_gap, norm_TmSm, n):
    _check_delta(delta_Tm, m)
    k = n // m
    dk = delta_Tm ** k
    return dk, dk * max_power_gap + (1.0 - dk) / (1.0 - delta_Tm) * norm_TmSm


def bound_floor_based(m: int, delta_Tm: float, dist_xz: float, max_power_gap: float,
                      norm_TmSm: float, norm_TS: float | None = None, n: int = 1) -> float:
    """``delta^k (dist + gap) + (1 - delta^k) / (1 - delta) ||T^m - S^m||``, ``k = n // m``.

    ``norm_TS`` is accepted for signature symmetry with :func:`bound_eq14`
    and is not used.
    """
    a, b = floor_coeffs(m, delta_Tm, max_power_gap, norm_TmSm, n)
    return a * dist_xz + b


def bound_eq14(m: int, delta_Tm: float, dist_xz: float, norm_TS: float) -> float:
    """Uniform-in-n bound ``sup_n delta^{n//m} ||x - z|| + m ||T - S|| / (1 - delta)``.

    ``sup_n delta^{n//m}`` is 1 (attained at ``n < m``). See
    :func:`bound_eq14_literal` for the variant without the distance factor.
    """
    _check_delta(delta_Tm, m)
    return dist_xz + m * norm_TS / (1.0 - delta_Tm)


def bound_eq14_literal(m: int, delta_Tm: float, norm_TS: float) -> float:
    """``sup_n delta^{n//m} + m ||T - S|| / (1 - delta)`` with no distance factor.

    Only valid for start pairs with ``||x - z|| <= 1``.
    """
    _check_delta(delta_Tm, m)
    return 1.0 + m * norm_TS / (1.0 - delta_Tm)


def bound_per62(delta_Tm: float, norm_SmTm: float) -> float:
    """``||S^m - T^m|| / (1 - delta(T^m) - ||S^m - T^m||)``; infinite when not applicable."""
    _check_delta(delta_Tm)
    margin = 1.0 - delta_Tm - norm_SmTm
    return norm_SmTm / margin if margin > 0 else math.inf


# -- certified inputs -----------------------------------------------------

def certified_delta_power(T: MarkovOperator, m: int, delta_upper: float | None = None,
                          attest: bool = False) -> float:
    """A certified upper bound on ``delta(T^m)``.

    Exact on the classical space. Elsewhere it is ``ub^m`` where ``ub`` is
    the operator's analytic ``delta_upper`` or a user-supplied value, the
    latter only with ``attest=True``.
    """
    if T.space.exact:
        P = np.linalg.matrix_power(T.matrix, m)
        return delta_coefficient(P, T.space, samples=0).value
    if delta_upper is not None:
        if not attest:
            raise CertificationError("a user-supplied delta upper bound needs attest=True")
        return float(delta_upper) ** m
    if T.delta_upper is not None:
        return T.delta_upper ** m
    raise CertificationError(
        f"delta on the {T.space.kind} space is only a sampled lower bound; "
        "supply an attested upper bound"
    )


def _norm(A, space, budget, seed):
    return operator_norm(A, space, budget=budget, seed=seed)


# -- Neumann series and stability transfer --------------------------------

def neumann_inverse_on_N(S: MarkovOperator, m: int, x: Element, rho: float,
                         tol: float = 1e-12) -> Element:
    """``(I - S^m)^{-1} x = sum_n S^{mn} x`` for ``x`` in the null space of f.

    ``rho < 1`` must bound the contraction of ``S^m`` on that null space;
    the series is truncated once the tail bound
    ``rho^{N+1} ||x|| / (1 - rho)`` drops below ``tol``.
    """
    space = S.space
    if not 0.0 <= rho < 1.0:
        raise PreconditionError("rho must lie in [0, 1)")
    nx = float(space.norm(x.coords))
    if abs(functional_f(x)) > 1e-9 * max(1.0, nx):
        raise PreconditionError("x must satisfy f(x) = 0")
    if nx == 0.0:
        return Element(space, np.zeros(space.dim))
    Sm = np.linalg.matrix_power(S.matrix, m)
    if rho == 0.0:
        n_terms = 1
    else:
        n_terms = max(1, math.ceil(math.log(tol * (1.0 - rho) / nx) / math.log(rho)))
    y = np.zeros(space.dim)
    term = np.array(x.coords, dtype=float)
    for _ in range(n_terms):
        y += term
        term = Sm @ term
        if not np.any(term):
            break
    ny = float(space.norm(y))
    if ny > nx / (1.0 - rho) + tol:
        raise NumericalFailure(
            f"series norm {ny:.6g} exceeds ||x||/(1-rho) = {nx / (1.0 - rho):.6g}; rho is not a valid contraction factor"
        )
    return Element(space, y)


@dataclass
class TransferResult:
    verdict: str
    margin: float
    delta_Tm: float
    norm_SmTm: float
    rho: float | None = None
    x0: Element | None = None
    z0: Element | None = None
    bound: float | None = None
    actual: float | None = None
    fixed_point_residual: float | None = None
    neumann_residual: float | None = None

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "margin": self.margin,
            "delta_Tm": self.delta_Tm,
            "norm_SmTm": self.norm_SmTm,
            "rho": self.rho,
            "x0": None if self.x0 is None else self.x0.coords.tolist(),
            "z0": None if self.z0 is None else self.z0.coords.tolist(),
            "per62": self.bound,
            "actual": self.actual,
            "fixed_point_residual": self.fixed_point_residual,
            "neumann_residual": self.neumann_residual,
        }


APPLIES = "Applies"
DOES_NOT_APPLY = "DoesNotApply"


def stability_transfer(T: MarkovOperator, S: MarkovOperator, m: int, tol: float = 1e-12,
                       delta_upper: float | None = None, attest: bool = False,
                       x0: Element | None = None, budget: int = 16, seed: int = 0) -> TransferResult:
    """Transfer uniform asymptotic stability from ``T`` to a nearby ``S``.

    When ``||S^m - T^m|| < 1 - delta(T^m)``, ``S`` has a unique fixed state
    ``z0 = x0 - (I - S^m)^{-1} (I - S^m) x0`` within the ``per62`` bound of
    ``x0``.
    """
    _require_validated(T)
    _require_validated(S)
    if T.space != S.space:
        raise MalformedError("T and S live on different spaces")
    space = T.space
    delta_Tm = certified_delta_power(T, m, delta_upper, attest)
    if delta_Tm >= 1.0:
        raise CertificationError(f"delta(T^{m}) = {delta_Tm:.6g} is not below 1")
    Tm = np.linalg.matrix_power(T.matrix, m)
    Sm = np.linalg.matrix_power(S.matrix, m)
    eps = _norm(Sm - Tm, space, budget, seed)
    margin = 1.0 - delta_Tm - eps
    if margin <= 0:
        return TransferResult(DOES_NOT_APPLY, margin, delta_Tm, eps)
    rho = eps + delta_Tm
    if x0 is None:
        x0 = ergodicity.fixed_point(T, tol)
    r = Element(space, x0.coords - Sm @ x0.coords)
    y = neumann_inverse_on_N(S, m, r, rho, tol)
    neumann_res = float(space.norm(y.coords - Sm @ y.coords - r.coords))
    z0 = Element(space, x0.coords - y.coords)
    return TransferResult(
        APPLIES, margin, delta_Tm, eps, rho, x0, z0,
        bound=eps / margin,
        actual=float(space.norm(x0.coords - z0.coords)),
        fixed_point_residual=float(space.norm(S.matrix @ z0.coords - z0.coords)),
        neumann_residual=neumann_res,
    )


# -- aggregated report ----------------------------------------------------

TRAJECTORY_EQS = ("eq1", "eq5", "eq7", "eq8", "eq12", "eq14")
STATIONARY_EQS = ("eq6", "eq9", "per62")


def _ratio(actual, bound):
    if bound == 0.0:
        return 1.0 if actual == 0.0 else math.inf
    return actual / bound


@dataclass
class PerturbationReport:
    """All perturbation bounds for a pair ``(T, S)`` against actual distances.

    ``actual[n, i, j]`` is ``||T^n x_i - S^n x_j||`` for the start states
    ``starts[i]``, ``starts[j]``; ``dist[i, j] = ||x_i - x_j||``. Trajectory
    bounds are stored per ``n`` as ``(slope, offset)`` arrays so that the
    bound for a pair is ``slope * dist + offset``.
    """

    m: int | None
    horizon: int
    available: bool
    delta_Tm: float | None = None
    delta_certified: bool = True
    delta_upper_attested: float | None = None
    norm_TS: float = 0.0
    norm_TmSm: float | None = None
    max_power_gap: float | None = None
    max_power_gap_incl_m: float | None = None
    C: float | None = None
    alpha: float | None = None
    n_tilde: int | None = None
    bounds: dict = field(default_factory=dict)
    coeffs: dict = field(default_factory=dict)
    starts: np.ndarray | None = None
    dist: np.ndarray | None = None
    actual: np.ndarray | None = None
    actual_stationary_distance: float | tuple | None = None
    x0: Element | None = None
    z0: Element | None = None
    S_uas: bool = False
    S_certified: bool = False
    transfer: TransferResult | None = None
    worst_slack: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def sound(self) -> bool:
        return all(v <= SOUNDNESS_TOL for v in self.worst_slack.values())

    def eq12_limit(self) -> float | None:
        """Value of the floor-based bound as ``n -> infinity``."""
        if not self.available:
            return None
        return self.norm_TmSm / (1.0 - self.delta_Tm)

    def to_json(self) -> dict:
        stat = self.actual_stationary_distance
        return {
            "m": self.m,
            "horizon": self.horizon,
            "available": self.available,
            "delta_Tm": self.delta_Tm,
            "delta_certified": self.delta_certified,
            "delta_upper_attested": self.delta_upper_attested,
            "norm_TS": self.norm_TS,
            "norm_TmSm": self.norm_TmSm,
            "max_power_gap": self.max_power_gap,
            "max_power_gap_incl_m": self.max_power_gap_incl_m,
            "C": self.C,
            "alpha": None if self.alpha is None or math.isinf(self.alpha) else self.alpha,
            "n_tilde": self.n_tilde,
            "bounds": {k: _finite(v) for k, v in sorted(self.bounds.items())},
            "actual_stationary_distance": list(stat) if isinstance(stat, tuple) else stat,
            "actual_trajectory_max": None if self.actual is None
            else self.actual.max(axis=(1, 2)).tolist(),
            "x0": None if self.x0 is None else self.x0.coords.tolist(),
            "z0": None if self.z0 is None else self.z0.coords.tolist(),
            "S_uas": self.S_uas,
            "S_certified": self.S_certified,
            "transfer": None if self.transfer is None else self.transfer.to_json(),
            "worst_slack": dict(sorted(self.worst_slack.items())),
            "ratios": {k: _finite(v) for k, v in sorted(self.ratios.items())},
            "flags": self.flags,
            "sound": self.sound,
        }

    def per_n_csv(self) -> str:
        """Rows ``n, x_index, z_index, dist, actual, eq1, eq8, eq12``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "x_index", "z_index", "dist", "actual", "eq1", "eq8", "eq12"])
        if self.actual is None:
            return buf.getvalue()
        k = self.dist.shape[0]
        for n in range(self.horizon + 1):
            for i in range(k):
                for j in range(k):
                    d = self.dist[i, j]
                    row = [n, i, j, repr(float(d)), repr(float(self.actual[n, i, j]))]
                    for eq in ("eq1", "eq8", "eq12"):
                        if eq in self.coeffs:
                            a, b = self.coeffs[eq]
                            row.append(repr(float(a[n] * d + b[n])))
                        else:
                            row.append("")
                    w.writerow(row)
        return buf.getvalue()


def _finite(v):
    return None if v is None or (isinstance(v, float) and math.isinf(v)) else v


def _start_states(space, budget, seed):
    if space.exact:
        return space.special_extreme()
    pts = extreme_points(space, budget, seed)
    return np.column_stack([p.coords for p in pts])


def _pairwise_norms(space, X, Z):
    k = X.shape[1]
    diff = (X[:, :, None] - Z[:, None, :]).reshape(space.dim, k * k)
    return np.asarray(space.norm(diff)).reshape(k, k)


def tightness_report(T: MarkovOperator, S: MarkovOperator, m: int | None = None,
                     horizon: int = 64, tol: float = 1e-12, delta_upper: float | None = None,
                     attest: bool = False, n_max: int = ergodicity.DEFAULT_N_MAX,
                     budget: int = 4, seed: int = 0) -> PerturbationReport:
    """Evaluate every perturbation bound for ``(T, S)`` and the actual distances.

    Start states are the vertices of the base (classical) or the axis/basis
    extreme points plus ``budget`` random ones. When ``m`` is omitted it is
    the smallest power with ``delta(T^m) < 1``. When no such power is
    certified the bounds are marked unavailable and only the trajectories
    are reported.
    """
    _require_validated(T)
    _require_validated(S)
    space = T.space
    if S.space != space:
        raise MalformedError("T and S live on different spaces")
    ub = None
    if not space.exact:
        ub = certified_delta_power(T, 1, delta_upper, attest)
    found = ergodicity.find_contractive_power(T, n_max, delta_upper=ub)

    if m is None:
        m = found[0] if found is not None else None
    rep = PerturbationReport(m=m, horizon=horizon, available=False,
                             delta_certified=space.exact,
                             delta_upper_attested=delta_upper if attest else None)
    if not space.exact:
        rep.flags.append("norms_are_estimates")
    rep.norm_TS = _norm(T.matrix - S.matrix, space, budget, seed)

    X = _start_states(space, budget, seed)
    rep.starts = X
    rep.dist = _pairwise_norms(space, X, X)
    acts = np.empty((horizon + 1, X.shape[1], X.shape[1]))
    TX, SX = X.copy(), X.copy()
    for n in range(horizon + 1):
        acts[n] = _pairwise_norms(space, TX, SX)
        TX, SX = T.matrix @ TX, S.matrix @ SX
    rep.actual = acts

    if m is not None:
        dm = certified_delta_power(T, m, delta_upper, attest)
        rep.delta_Tm = dm
        if dm < 1.0 - 1e-12:
            rep.available = True
    if not rep.available:
        rep.flags.append("bounds_unavailable")
        if m is not None:
            rep.transfer = TransferResult(DOES_NOT_APPLY, -math.inf, rep.delta_Tm or 1.0, math.nan)
        return rep

    dm = rep.delta_Tm
    Tp, Sp = np.eye(space.dim), np.eye(space.dim)
    gaps = []
    for _ in range(m):
        Tp, Sp = Tp @ T.matrix, Sp @ S.matrix
        gaps.append(_norm(Tp - Sp, space, budget, seed))
    rep.norm_TmSm = gaps[-1]
    rep.max_power_gap = max(gaps[:-1], default=0.0)
    rep.max_power_gap_incl_m = max(gaps)

    x0 = ergodicity.fixed_point(T, tol)
    rep.x0 = x0

    ns = np.arange(horizon + 1)
    coeffs = {}
    if found is not None:
        rep.C, rep.alpha, rep.n_tilde = ergodicity.geometric_envelope(*found)
        c1 = [rate_coeffs(rep.C, rep.alpha, rep.norm_TS, int(n), rep.n_tilde) for n in ns]
        coeffs["eq1"] = tuple(np.array(v) for v in zip(*c1))
        rc = rate_coefficient(rep.C, rep.alpha, rep.n_tilde)
        coeffs["eq5"] = (np.ones(len(ns)), np.full(len(ns), rc * rep.norm_TS))
        rep.bounds["eq6"] = rc * rep.norm_TS
    c8 = [delta_coeffs(m, dm, rep.max_power_gap, rep.norm_TmSm, int(n)) for n in ns]
    coeffs["eq8"] = tuple(np.array(v) for v in zip(*c8))
    c12 = [floor_coeffs(m, dm, rep.max_power_gap, rep.norm_TmSm, int(n)) for n in ns]
    coeffs["eq12"] = tuple(np.array(v) for v in zip(*c12))
    coeffs["eq14"] = (np.ones(len(ns)), np.full(len(ns), m * rep.norm_TS / (1.0 - dm)))
    # eq7 only constrains n = k m with k >= 1
    mult = (ns >= m) & (ns % m == 0)
    coeffs["eq7"] = (np.where(mult, dm, np.inf), np.where(mult, rep.norm_TmSm / (1.0 - dm), 0.0))
    rep.coeffs = coeffs
    rep.bounds["eq9"] = bound_eq9(dm, rep.norm_TmSm)
    rep.bounds["eq12_limit"] = rep.eq12_limit()
    rep.bounds["eq14_literal"] = bound_eq14_literal(m, dm, rep.norm_TS)
    rep.bounds["eq14_max"] = float(rep.dist.max()) + m * rep.norm_TS / (1.0 - dm)
    if m > 1:
        rep.flags.append("eq14_trivial_headroom")

    with np.errstate(invalid="ignore"):
        for eq, (a, b) in coeffs.items():
            bnd = a[:, None, None] * rep.dist[None] + b[:, None, None]
            slack = acts - bnd
            slack = np.where(np.isfinite(bnd), slack, -np.inf)
            rep.worst_slack[eq] = float(slack.max())
            with np.errstate(divide="ignore"):
                ratio = np.where(bnd > 0, acts / np.where(bnd > 0, bnd, 1.0),
                                 np.where(acts == 0, 1.0, np.inf))
            ratio = np.where(np.isfinite(bnd), ratio, 0.0)
            rep.ratios[eq] = float(ratio.max())

    # stationary comparison
    fs = ergodicity.find_contractive_power(S, n_max)
    transfer = stability_transfer(T, S, m, tol, delta_upper, attest, x0=x0, budget=budget, seed=seed)
    rep.transfer = transfer
    rep.bounds["per62"] = transfer.bound if transfer.verdict == APPLIES else None
    # S_certified uses only S; S_uas also accepts the transfer's certificate
    rep.S_certified = fs is not None
    rep.S_uas = rep.S_certified or transfer.verdict == APPLIES
    if rep.S_uas:
        z0 = ergodicity.fixed_point(S, tol)
        rep.z0 = z0
        d = float(space.norm(x0.coords - z0.coords))
        rx = float(space.norm(T.matrix @ x0.coords - x0.coords))
        rz = float(space.norm(S.matrix @ z0.coords - z0.coords))
        rep.actual_stationary_distance = d if max(rx, rz) <= tol else (d - 2 * tol, d + 2 * tol)
        hi = d if max(rx, rz) <= tol else d + 2 * tol
        for eq in STATIONARY_EQS:
            bnd = rep.bounds.get(eq)
            if bnd is None:
                continue
            rep.worst_slack[eq] = hi - bnd
            rep.ratios[eq] = _ratio(d, bnd)
    return rep
