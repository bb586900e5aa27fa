"""Markov operators as dense matrices in canonical coordinates.

A Markov operator maps the base into itself. On the classical space its
matrix is column-stochastic; on the other spaces it preserves the
functional row and sends cone points to cone points.

The Dobrushin coefficient is computed from its defining supremum

    delta(A) = 1/2 sup_{u, v in K} ||A u - A v||,

which is a finite vertex enumeration on the classical space and a
multistart ascent over extreme points elsewhere (a witnessed lower bound).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedError, PreconditionError
from .spaces import (
    CLASSICAL,
    QUANTUM,
    Element,
    SpaceDescriptor,
    base_norm,
    encode_matrix,
    hermitian_basis,
    in_base,
    lemma32_decompose,
    quantum,
)

POS_TOL = 1e-12
F_TOL = 1e-9
# ascent stops once a step improves the objective by less than this (relative)
ASCENT_RTOL = 1e-10


@dataclass(frozen=True)
class Violation:
    kind: str
    magnitude: float
    witness: object

    def to_json(self) -> dict:
        w = self.witness
        if isinstance(w, np.ndarray):
            w = w.tolist()
        return {"kind": self.kind, "magnitude": float(self.magnitude), "witness": w}


@dataclass(frozen=True)
class MarkovOperator:
    """A linear map on an ordered space plus the outcome of its validation.

    ``delta_upper`` optionally carries an analytic upper bound on the
    Dobrushin coefficient, known from the way the operator was built.
    """

    space: SpaceDescriptor
    matrix: np.ndarray = field(repr=False)
    validated: bool = False
    validation_report: tuple = ()
    cp_certified: bool = False
    delta_upper: float | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "validation_report", tuple(self.validation_report))

    def __call__(self, x: Element) -> Element:
        if x.space != self.space:
            raise MalformedError("element and operator live on different spaces")
        return Element(self.space, self.matrix @ x.coords)

    def __matmul__(self, other: "MarkovOperator") -> "MarkovOperator":
        if other.space != self.space:
            raise MalformedError("operators live on different spaces")
        return _trusted(
            self.space,
            self.matrix @ other.matrix,
            cp_certified=self.cp_certified and other.cp_certified,
            delta_upper=_product_bound(self.delta_upper, other.delta_upper),
        )

    def to_json(self) -> dict:
        out = {"space": self.space.to_json(), "matrix": self.matrix.tolist()}
        out["validated"] = self.validated
        out["validation_report"] = [v.to_json() for v in self.validation_report]
        if self.cp_certified:
            out["cp_certified"] = True
        if self.delta_upper is not None:
            out["delta_upper"] = self.delta_upper
        return out


def _product_bound(a, b):
    if a is None and b is None:
        return None
    return (1.0 if a is None else a) * (1.0 if b is None else b)


def _trusted(space, matrix, cp_certified=False, delta_upper=None) -> MarkovOperator:
    # Markov by construction (products and convex mixtures of Markov maps)
    return MarkovOperator(space, matrix, True, (), cp_certified, delta_upper)


def check_shape(matrix, space: SpaceDescriptor) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.shape != (space.dim, space.dim):
        raise MalformedError(f"matrix of shape {m.shape}, expected {(space.dim, space.dim)}")
    if not np.all(np.isfinite(m)):
        raise MalformedError("matrix entries must be finite")
    return m


def validate_markov(
    matrix,
    space: SpaceDescriptor,
    samples: int = 64,
    seed: int = 0,
    tol: float = F_TOL,
    cp_certified: bool = False,
    delta_upper: float | None = None,
) -> MarkovOperator:
    """Check that ``matrix`` is a Markov operator on ``space``.

    f-preservation is checked through the matrix directly. Positivity is
    checked entrywise on the classical space and on the images of the
    deterministic extreme points plus ``samples`` random ones elsewhere
    (complete positivity is not checked).

    Violations do not raise; they are listed in ``validation_report`` and
    leave ``validated`` false. Witness indices are 0-based.
    """
    m = check_shape(matrix, space)
    report = []
    fv = space.f_vector
    drift = fv @ m - fv
    bad = np.flatnonzero(np.abs(drift) > tol)
    if bad.size:
        j = int(bad[np.argmax(np.abs(drift[bad]))])
        report.append(Violation("f_not_preserved", float(abs(drift[j])), j))
    if space.kind == CLASSICAL:
        for i, j in zip(*np.nonzero(m < -POS_TOL)):
            report.append(Violation("negative_entry", float(-m[i, j]), (int(i), int(j))))
    else:
        rng = np.random.default_rng(seed)
        pts = np.hstack([space.special_extreme(), space.sample_extreme(samples, rng)])
        images = m @ pts
        ok = np.atleast_1d(space.contains(images, tol))
        for j in np.flatnonzero(~ok):
            img = images[:, j]
            if space.kind == QUANTUM:
                deficit = -float(space.eigenvalues(img).min())
            else:
                deficit = float(space.tail_norm(img) - img[0])
            report.append(Violation("cone_violation", deficit, pts[:, j]))
    return MarkovOperator(space, m, not report, tuple(report), cp_certified, delta_upper)


def channel_matrix(kraus, d: int) -> np.ndarray:
    """Coordinate matrix of ``rho -> sum_k K rho K^dagger``."""
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    basis = hermitian_basis(d)
    images = np.zeros_like(basis)
    for k in kraus:
        if k.shape != (d, d):
            raise MalformedError(f"Kraus operator of shape {k.shape}, expected {(d, d)}")
        images += k @ basis @ k.conj().T
    return encode_matrix(images).T


def from_kraus(kraus, d: int | None = None, samples: int = 64, seed: int = 0,
               delta_upper: float | None = None) -> MarkovOperator:
    """Quantum channel from a Kraus set, validated and tagged ``cp_certified``."""
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    d = kraus[0].shape[0] if d is None else d
    space = quantum(d)
    return validate_markov(channel_matrix(kraus, d), space, samples, seed,
                           cp_certified=True, delta_upper=delta_upper)


def amplitude_damping(gamma: float) -> MarkovOperator:
    """Qubit amplitude-damping channel.

    Its Bloch-ball action has linear part ``diag(sqrt(1-g), sqrt(1-g), 1-g)``,
    so ``delta = sqrt(1 - gamma)``; that value is attached as ``delta_upper``.
    """
    k1 = np.diag([1.0, np.sqrt(1.0 - gamma)])
    k2 = np.array([[0.0, np.sqrt(gamma)], [0.0, 0.0]])
    return from_kraus([k1, k2], 2, delta_upper=float(np.sqrt(1.0 - gamma)))


def operator_from_json(obj: dict, samples: int = 64, seed: int = 0) -> MarkovOperator:
    """Read ``{"space": .., "matrix": ..}`` or ``{"space": .., "kraus": [..]}``."""
    try:
        space = SpaceDescriptor.from_json(obj["space"])
        if "matrix" in obj:
            return validate_markov(np.asarray(obj["matrix"], dtype=float), space, samples, seed)
        if "kraus" in obj:
            if space.kind != QUANTUM:
                raise MalformedError("Kraus sets only make sense on a quantum space")
            kraus = []
            for k in obj["kraus"]:
                mat = np.asarray(k["re"], dtype=float)
                if "im" in k:
                    mat = mat + 1j * np.asarray(k["im"], dtype=float)
                kraus.append(mat)
            return from_kraus(kraus, space.d, samples, seed)
    except MalformedError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedError(f"bad operator JSON: {exc}") from exc
    raise MalformedError("operator JSON needs 'matrix' or 'kraus'")


def identity(space: SpaceDescriptor) -> MarkovOperator:
    return _trusted(space, np.eye(space.dim), cp_certified=True, delta_upper=1.0)


def _require_validated(T: MarkovOperator):
    if not T.validated:
        raise PreconditionError("operator has not passed Markov validation")


def power_and_cesaro(T: MarkovOperator, n: int, samples: int = 16) -> tuple[MarkovOperator, MarkovOperator]:
    """Return ``T^n`` and the Cesaro average ``A_n = (1/n) sum_{k<n} T^k``.

    ``A_1`` is the identity. Both results are re-validated once at the end
    so floating drift is measured rather than assumed away.
    """
    _require_validated(T)
    if n < 1:
        raise PreconditionError("n must be >= 1")
    power = np.linalg.matrix_power(T.matrix, n)
    acc = np.zeros_like(T.matrix)
    pk = np.eye(T.space.dim)
    for _ in range(n):
        acc += pk
        pk = pk @ T.matrix
    avg = acc / n
    up = T.delta_upper
    tn = validate_markov(power, T.space, samples, cp_certified=T.cp_certified,
                         delta_upper=None if up is None else up ** n)
    an = validate_markov(avg, T.space, samples, cp_certified=T.cp_certified)
    return tn, an


def cesaro_sequence(matrix, n_max: int):
    """Yield ``(n, T^n, A_n)`` for ``n = 1 .. n_max`` on raw matrices."""
    dim = matrix.shape[0]
    pk = np.eye(dim)
    acc = np.zeros((dim, dim))
    for n in range(1, n_max + 1):
        acc += pk
        pk = pk @ matrix
        yield n, pk, acc / n


# -- suprema over the base ------------------------------------------------

def _starts(space, budget, rng):
    pts = space.special_extreme()
    if space.kind != CLASSICAL:
        pts = np.hstack([pts, space.sample_extreme(budget, rng)])
    return pts


def _ascend_norm(A, space, U, iters):
    """Linearization ascent of the convex map ``u -> ||A u||`` from each column of ``U``.

    Each step jumps to the extreme point maximizing the linearization at the
    current point, which never decreases a convex objective. Returns the
    final values and points (columnwise).
    """
    best = np.asarray(space.norm(A @ U), dtype=float)
    active = np.ones(best.shape, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        w = space.subgradient(A @ U[:, idx])
        cand = space.argmax_over_base(A.T @ w)
        val = np.asarray(space.norm(A @ cand), dtype=float)
        up = val > best[idx] + ASCENT_RTOL * best[idx]
        U[:, idx[up]] = cand[:, up]
        best[idx[up]] = val[up]
        active[idx[~up]] = False
    return best, U


def _ascend_pair(A, space, U, V, iters):
    """Same ascent for ``(u, v) -> ||A (u - v)||`` over pairs of columns."""
    best = np.asarray(space.norm(A @ (U - V)), dtype=float)
    active = np.ones(best.shape, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        w = space.subgradient(A @ (U[:, idx] - V[:, idx]))
        g = A.T @ w
        cu, cv = space.argmax_over_base(g), space.argmax_over_base(-g)
        val = np.asarray(space.norm(A @ (cu - cv)), dtype=float)
        up = val > best[idx] + ASCENT_RTOL * best[idx]
        U[:, idx[up]] = cu[:, up]
        V[:, idx[up]] = cv[:, up]
        best[idx[up]] = val[up]
        active[idx[~up]] = False
    return best, U, V


@dataclass(frozen=True)
class NormEstimate:
    value: float
    certified: bool
    witness: Element


def operator_norm_estimate(A, space: SpaceDescriptor, budget: int = 64, seed: int = 0,
                           iters: int = 500) -> NormEstimate:
    """``sup_{u in K} ||A u||``, which is the operator norm for the base norm.

    Exact on the classical space (max column l1 norm). Elsewhere a multistart
    ascent gives a witnessed lower bound (``certified`` false).
    """
    A = check_shape(A, space)
    if space.kind == CLASSICAL:
        cols = np.abs(A).sum(axis=0)
        j = int(np.argmax(cols))
        return NormEstimate(float(cols[j]), True, Element(space, np.eye(space.n)[:, j]))
    rng = np.random.default_rng(seed)
    starts = _starts(space, budget, rng).copy()
    vals, pts = _ascend_norm(A, space, starts, iters)
    k = int(np.argmax(vals))
    best, arg = float(vals[k]), pts[:, k]
    return NormEstimate(best, False, Element(space, arg))


def operator_norm(A, space: SpaceDescriptor, budget: int = 64, seed: int = 0,
                  iters: int = 500) -> float:
    """Operator norm of ``A`` (a lower-bound estimate off the classical space)."""
    if isinstance(A, MarkovOperator):
        A = A.matrix
    return operator_norm_estimate(A, space, budget, seed, iters).value


@dataclass(frozen=True)
class DeltaEstimate:
    """Dobrushin coefficient together with the pair of states achieving it.

    ``secondary`` is the best ratio ``||A x|| / ||x||`` found by sampling the
    null space of f directly; it never exceeds ``value`` by more than
    rounding.
    """

    value: float
    certified: bool
    witness_pair: tuple
    method: str
    secondary: float = 0.0

    def to_json(self) -> dict:
        u, v = self.witness_pair
        return {
            "value": self.value,
            "certified": self.certified,
            "method": self.method,
            "secondary": self.secondary,
            "witness_pair": [u.coords.tolist(), v.coords.tolist()],
        }


def _null_space_samples(A, space, count, rng):
    """Best ``||A x|| / ||x||`` over random ``x`` with ``f(x) = 0``."""
    if count <= 0 or space.dim < 2:
        return 0.0, None
    k = 4
    pts = space.sample_extreme(2 * k * count, rng) if space.kind != CLASSICAL else None
    best, arg = 0.0, None
    for i in range(count):
        if space.kind == CLASSICAL:
            a, b = rng.dirichlet(np.ones(space.n)), rng.dirichlet(np.ones(space.n))
        else:
            wa, wb = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
            a = pts[:, 2 * k * i: 2 * k * i + k] @ wa
            b = pts[:, 2 * k * i + k: 2 * k * (i + 1)] @ wb
        x = a - b
        nx = float(space.norm(x))
        if nx < 1e-12:
            continue
        r = float(space.norm(A @ x)) / nx
        if r > best:
            best, arg = r, x
    return best, arg


def delta_coefficient(A, space: SpaceDescriptor, budget: int = 64, seed: int = 0,
                      iters: int = 500, samples: int | None = None) -> DeltaEstimate:
    """Dobrushin coefficient of an arbitrary linear map ``A`` on ``space``.

    Uses ``delta(A) = 1/2 sup_{u,v in K} ||A(u - v)||``, valid for every
    linear map because any zero-functional ``x`` is ``||x||/2 (u - v)``.
    """
    A = check_shape(A, space)
    rng = np.random.default_rng(seed)
    samples = budget if samples is None else samples
    secondary, sx = _null_space_samples(A, space, samples, rng)

    if space.kind == CLASSICAL:
        n = space.n
        eye = np.eye(n)
        if n == 1:
            return DeltaEstimate(0.0, True, (Element(space, eye[0]), Element(space, eye[0])),
                                 "vertex_enumeration", secondary)
        diffs = 0.5 * np.abs(A[:, :, None] - A[:, None, :]).sum(axis=0)
        iu = np.triu_indices(n, 1)
        k = int(np.argmax(diffs[iu]))
        i, j = int(iu[0][k]), int(iu[1][k])
        return DeltaEstimate(float(diffs[i, j]), True,
                             (Element(space, eye[i]), Element(space, eye[j])),
                             "vertex_enumeration", secondary)

    special = space.special_extreme()
    ns = special.shape[1]
    pairs = [(special[:, i], special[:, j]) for i in range(ns) for j in range(i + 1, ns)]
    rand = space.sample_extreme(2 * budget, rng)
    pairs += [(rand[:, 2 * i], rand[:, 2 * i + 1]) for i in range(budget)]
    if sx is not None:
        u0, v0, _ = lemma32_decompose(Element(space, sx))
        pairs.insert(0, (u0.coords, v0.coords))
    U = np.column_stack([p[0] for p in pairs])
    V = np.column_stack([p[1] for p in pairs])
    vals, U, V = _ascend_pair(A, space, U, V, iters)
    k = int(np.argmax(vals))
    best, bu, bv = float(vals[k]), U[:, k], V[:, k]
    return DeltaEstimate(0.5 * best, False, (Element(space, bu), Element(space, bv)),
                         "multistart_optimization", secondary)


def dobrushin_delta(T: MarkovOperator, budget: int = 64, seed: int = 0,
                    iters: int = 500) -> DeltaEstimate:
    """Dobrushin ergodicity coefficient of a validated Markov operator.

    Examples
    --------
    >>> from dobrushin.spaces import classical
    >>> T = validate_markov([[0.9, 0.2], [0.1, 0.8]], classical(2))
    >>> round(dobrushin_delta(T).value, 12)
    0.7
    """
    _require_validated(T)
    est = delta_coefficient(T.matrix, T.space, budget, seed, iters)
    value = min(max(est.value, 0.0), 1.0)
    return DeltaEstimate(value, est.certified, est.witness_pair, est.method, est.secondary)


def rank_one_matrix(y, space: SpaceDescriptor) -> np.ndarray:
    return np.outer(y, space.f_vector)


def rank_one(y: Element, tol: float = 1e-9) -> MarkovOperator:
    """The replacement map ``x -> f(x) y`` for a state ``y``."""
    if not in_base(y, tol):
        raise PreconditionError("rank_one needs an element of the base")
    return _trusted(y.space, rank_one_matrix(y.coords, y.space), cp_certified=True,
                    delta_upper=0.0)


def mixture_with_fixed_point(T: MarkovOperator, phi: Element, eps: float,
                             tol: float = 1e-8) -> MarkovOperator:
    """Return ``(1 - eps/2) T + (eps/2) T_phi`` for a fixed state ``phi`` of ``T``.

    The result fixes ``phi``, lies within ``eps`` of ``T`` and has
    ``delta <= (1 - eps/2) delta(T)``, which is recorded in ``delta_upper``.
    """
    _require_validated(T)
    if not 0.0 < eps < 2.0:
        raise PreconditionError("eps must lie in (0, 2)")
    if not in_base(phi, tol):
        raise PreconditionError("phi must be a state")
    resid = base_norm(T(phi) - phi)
    if resid > tol:
        raise PreconditionError(f"phi is not a fixed point of T (residual {resid:.3e})")
    h = eps / 2.0
    mat = (1.0 - h) * T.matrix + h * rank_one_matrix(phi.coords, T.space)
    base = 1.0 if T.delta_upper is None else T.delta_upper
    return _trusted(T.space, mat, cp_certified=T.cp_certified, delta_upper=(1.0 - h) * base)
