"""Concrete ordered Banach spaces with a base.

Three spaces are supported, each living in real coordinates:

* ``classical`` -- R^n with the nonnegative orthant; the base is the
  probability simplex and the base norm is the l1 norm.
* ``pcone`` -- R^(d+1) with the cone ``x_0 >= ||(x_1..x_d)||_p``; the
  functional reads ``x_0``.
* ``quantum`` -- d x d Hermitian matrices with the positive semidefinite
  cone and the trace functional; the base is the set of density matrices
  and the base norm is the trace norm.

Quantum elements are stored as real coordinates in the orthonormal
Hermitian basis returned by :func:`hermitian_basis`.

Internally every space works on raw arrays of shape ``(dim,)`` or
``(dim, k)`` (k elements stored as columns); the module-level functions
wrap these for :class:`Element` instances.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, MalformedError, PreconditionError

CLASSICAL = "classical"
PCONE = "pcone"
QUANTUM = "quantum"
KINDS = (CLASSICAL, PCONE, QUANTUM)

CONE_TOL = 1e-9


@functools.lru_cache(maxsize=None)
def hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal Hermitian basis of the d x d matrices.

    Returns an array of shape ``(d*d, d, d)``. The order is fixed:

    0. ``I / sqrt(d)``
    1. symmetric off-diagonal ``(E_jk + E_kj) / sqrt(2)`` for ``j < k``
       in lexicographic order
    2. antisymmetric ``(-i E_jk + i E_kj) / sqrt(2)`` for ``j < k`` in
       lexicographic order
    3. diagonal ``(sum_{i<l} E_ii - l E_ll) / sqrt(l (l + 1))`` for
       ``l = 1 .. d-1``

    Every element ``B`` satisfies ``tr(B_i B_j) = delta_ij``.
    """
    basis = [np.eye(d, dtype=complex) / np.sqrt(d)]
    pairs = [(j, k) for j in range(d) for k in range(j + 1, d)]
    for j, k in pairs:
        b = np.zeros((d, d), dtype=complex)
        b[j, k] = b[k, j] = 1 / np.sqrt(2)
        basis.append(b)
    for j, k in pairs:
        b = np.zeros((d, d), dtype=complex)
        b[j, k] = -1j / np.sqrt(2)
        b[k, j] = 1j / np.sqrt(2)
        basis.append(b)
    for l in range(1, d):
        b = np.zeros((d, d), dtype=complex)
        b[np.arange(l), np.arange(l)] = 1.0
        b[l, l] = -l
        basis.append(b / np.sqrt(l * (l + 1)))
    out = np.array(basis)
    out.setflags(write=False)
    return out


def encode_matrix(mat) -> np.ndarray:
    """Real basis coordinates of a Hermitian matrix (or a stack of them)."""
    mat = np.asarray(mat, dtype=complex)
    basis = hermitian_basis(mat.shape[-1])
    # tr(B_j X) = sum_ab B_j[a, b] X[b, a]
    return np.einsum("jab,...ba->...j", basis, mat).real


def decode_coords(coords, d: int) -> np.ndarray:
    """Hermitian matrix from real basis coordinates.

    ``coords`` may have shape ``(d*d,)`` or ``(d*d, k)``; in the second case
    the result has shape ``(k, d, d)``.
    """
    coords = np.asarray(coords, dtype=float)
    basis = hermitian_basis(d)
    if coords.ndim == 1:
        return np.einsum("j,jab->ab", coords, basis)
    return np.einsum("jk,jab->kab", coords, basis)


@dataclass(frozen=True)
class SpaceDescriptor:
    """Which ordered space is in play, plus its dimensions.

    Use the :func:`classical`, :func:`pcone` and :func:`quantum` helpers
    rather than calling the constructor directly.
    """

    kind: str
    n: int | None = None
    d: int | None = None
    p: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MalformedError(f"unknown space kind {self.kind!r}")
        if self.kind == CLASSICAL:
            if self.n is None or int(self.n) != self.n or self.n < 1:
                raise MalformedError("classical space needs integer n >= 1")
        else:
            if self.d is None or int(self.d) != self.d or self.d < 1:
                raise MalformedError(f"{self.kind} space needs integer d >= 1")
        if self.kind == PCONE:
            if self.p is None or not (1.0 < float(self.p) < np.inf):
                raise MalformedError("pcone space needs 1 < p < inf")

    @property
    def dim(self) -> int:
        """Ambient coordinate dimension."""
        if self.kind == CLASSICAL:
            return self.n
        if self.kind == PCONE:
            return self.d + 1
        return self.d * self.d

    @property
    def q(self) -> float:
        """Conjugate exponent of ``p`` (p-cone only)."""
        return self.p / (self.p - 1.0)

    @property
    def exact(self) -> bool:
        """True when suprema over the base reduce to finite vertex sets."""
        return self.kind == CLASSICAL

    def to_json(self) -> dict:
        if self.kind == CLASSICAL:
            return {"kind": CLASSICAL, "n": self.n}
        if self.kind == PCONE:
            return {"kind": PCONE, "d": self.d, "p": self.p}
        return {"kind": QUANTUM, "d": self.d}

    @classmethod
    def from_json(cls, obj: dict) -> "SpaceDescriptor":
        try:
            kind = obj["kind"]
            if kind == CLASSICAL:
                return cls(CLASSICAL, n=int(obj["n"]))
            if kind == PCONE:
                return cls(PCONE, d=int(obj["d"]), p=float(obj["p"]))
            if kind == QUANTUM:
                return cls(QUANTUM, d=int(obj["d"]))
        except (KeyError, TypeError) as exc:
            raise MalformedError(f"bad space descriptor {obj!r}") from exc
        raise MalformedError(f"unknown space kind {kind!r}")

    # -- raw-array kernels ------------------------------------------------
    # All kernels accept a vector (dim,) or a column stack (dim, k).

    def check_coords(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim not in (1, 2) or x.shape[0] != self.dim:
            raise MalformedError(
                f"coordinates of shape {x.shape} do not fit a space of dimension {self.dim}"
            )
        if not np.all(np.isfinite(x)):
            raise MalformedError("coordinates must be finite")
        return x

    @property
    def f_vector(self) -> np.ndarray:
        """Coefficients of the functional f: ``f(x) = f_vector @ x``."""
        v = np.zeros(self.dim)
        if self.kind == CLASSICAL:
            v[:] = 1.0
        elif self.kind == PCONE:
            v[0] = 1.0
        else:
            v[0] = np.sqrt(self.d)
        return v

    def f(self, x) -> np.ndarray | float:
        return self.f_vector @ x

    def norm(self, x) -> np.ndarray | float:
        if self.kind == CLASSICAL:
            return np.abs(x).sum(axis=0)
        if self.kind == PCONE:
            return np.maximum(np.abs(x[0]), self.tail_norm(x))
        return np.abs(self.eigenvalues(x)).sum(axis=-1)

    def tail_norm(self, x):
        """p-norm of ``(x_1, .., x_d)`` (p-cone only)."""
        a = np.abs(x[1:])
        scale = a.max(axis=0)
        safe = np.where(scale > 0, scale, 1.0)
        return scale * ((a / safe) ** self.p).sum(axis=0) ** (1.0 / self.p)

    def eigenvalues(self, x) -> np.ndarray:
        """Eigenvalues of the encoded matrices (quantum only)."""
        return np.linalg.eigvalsh(decode_coords(x, self.d))

    def contains(self, x, tol: float = CONE_TOL):
        if self.kind == CLASSICAL:
            return np.all(x >= -tol, axis=0)
        if self.kind == PCONE:
            return x[0] >= self.tail_norm(x) - tol
        return self.eigenvalues(x).min(axis=-1) >= -tol

    def subgradient(self, x) -> np.ndarray:
        """A norming functional ``w`` for a vector ``x`` (or for each column).

        ``w @ x == norm(x)`` and ``|w @ u| <= 1`` for every ``u`` in the
        base, i.e. ``w`` lies in the dual unit ball.
        """
        x = np.asarray(x, dtype=float)
        if self.kind == CLASSICAL:
            return np.sign(x)
        if self.kind == PCONE:
            w = np.zeros_like(x)
            tail = self.tail_norm(x)
            first = np.abs(x[0]) >= tail
            w[0] = np.where(first, np.where(x[0] >= 0, 1.0, -1.0), 0.0)
            safe = np.where(tail > 0, tail, 1.0)
            rest = np.sign(x[1:]) * (np.abs(x[1:]) / safe) ** (self.p - 1.0)
            w[1:] = np.where(~first & (tail > 0), rest, 0.0)
            return w
        vals, vecs = np.linalg.eigh(decode_coords(x, self.d))
        signs = np.sign(vals)[..., None, :]
        out = encode_matrix((vecs * signs) @ np.swapaxes(vecs.conj(), -1, -2))
        return out if x.ndim == 1 else out.T

    def argmax_over_base(self, c) -> np.ndarray:
        """Extreme point ``u`` of the base maximizing ``c @ u`` (columnwise for 2-D ``c``).

        Ties are broken toward the lowest index.
        """
        c = np.asarray(c, dtype=float)
        u = np.zeros(c.shape)
        if self.kind == CLASSICAL:
            idx = np.argmax(c, axis=0)
            if c.ndim == 1:
                u[int(idx)] = 1.0
            else:
                u[idx, np.arange(c.shape[1])] = 1.0
            return u
        if self.kind == PCONE:
            u[0] = 1.0
            tail = c[1:]
            a = np.abs(tail)
            scale = a.max(axis=0)
            safe = np.where(scale > 0, scale, 1.0)
            nq = scale * ((a / safe) ** self.q).sum(axis=0) ** (1.0 / self.q)
            nz = nq > 0
            u[1:] = np.where(nz, np.sign(tail) * (a / np.where(nz, nq, 1.0)) ** (self.q - 1.0), 0.0)
            u[1] = np.where(nz, u[1], 1.0)
            return u
        _, vecs = np.linalg.eigh(decode_coords(c, self.d))
        top = vecs[..., :, -1]
        out = encode_matrix(top[..., :, None] * top[..., None, :].conj())
        return out if c.ndim == 1 else out.T

    def barycenter(self) -> np.ndarray:
        if self.kind == CLASSICAL:
            return np.full(self.n, 1.0 / self.n)
        x = np.zeros(self.dim)
        x[0] = 1.0 if self.kind == PCONE else 1.0 / np.sqrt(self.d)
        return x

    def sample_extreme(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """``k`` random extreme points of the base as columns."""
        if self.kind == CLASSICAL:
            return np.eye(self.n)[:, rng.integers(0, self.n, size=k)]
        if self.kind == PCONE:
            g = rng.standard_normal((self.d, k))
            g /= (np.abs(g) ** self.p).sum(axis=0) ** (1.0 / self.p)
            return np.vstack([np.ones((1, k)), g])
        psi = rng.standard_normal((self.d, k)) + 1j * rng.standard_normal((self.d, k))
        psi /= np.linalg.norm(psi, axis=0)
        if k == 0:
            return np.zeros((self.dim, 0))
        return encode_matrix(np.einsum("ik,jk->kij", psi, psi.conj())).T

    def special_extreme(self) -> np.ndarray:
        """Deterministic extreme points: vertices, axis points or basis states."""
        if self.kind == CLASSICAL:
            return np.eye(self.n)
        if self.kind == PCONE:
            pts = []
            for i in range(1, self.d + 1):
                for s in (1.0, -1.0):
                    e = np.zeros(self.dim)
                    e[0] = 1.0
                    e[i] = s
                    pts.append(e)
            return np.column_stack(pts)
        return np.column_stack([pure_state(np.eye(self.d)[:, i]) for i in range(self.d)])


def pure_state(psi) -> np.ndarray:
    """Coordinates of the density matrix ``|psi><psi|`` for a unit vector."""
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return encode_matrix(np.outer(psi, psi.conj()))


def classical(n: int) -> SpaceDescriptor:
    return SpaceDescriptor(CLASSICAL, n=n)


def pcone(d: int, p: float) -> SpaceDescriptor:
    return SpaceDescriptor(PCONE, d=d, p=float(p))


def quantum(d: int) -> SpaceDescriptor:
    return SpaceDescriptor(QUANTUM, d=d)


@dataclass(frozen=True)
class Element:
    """A point of an ordered space, stored in canonical coordinates."""

    space: SpaceDescriptor
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        coords = self.space.check_coords(self.coords)
        if coords.ndim != 1:
            raise MalformedError("an Element holds a single coordinate vector")
        coords = coords.copy()
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    def __repr__(self):
        return f"Element({self.space.kind}, {np.array2string(self.coords, precision=6)})"

    def __add__(self, other: "Element") -> "Element":
        _same_space(self, other)
        return Element(self.space, self.coords + other.coords)

    def __sub__(self, other: "Element") -> "Element":
        _same_space(self, other)
        return Element(self.space, self.coords - other.coords)

    def __mul__(self, scalar: float) -> "Element":
        return Element(self.space, float(scalar) * self.coords)

    __rmul__ = __mul__

    def __neg__(self) -> "Element":
        return Element(self.space, -self.coords)

    def matrix(self) -> np.ndarray:
        """Decoded Hermitian matrix (quantum elements only)."""
        if self.space.kind != QUANTUM:
            raise PreconditionError("only quantum elements decode to matrices")
        return decode_coords(self.coords, self.space.d)

    def to_json(self) -> dict:
        return {"space": self.space.to_json(), "coords": self.coords.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Element":
        try:
            space = SpaceDescriptor.from_json(obj["space"])
            if "coords" in obj:
                return cls(space, np.asarray(obj["coords"], dtype=float))
            if space.kind == QUANTUM and "matrix_re" in obj:
                mat = np.asarray(obj["matrix_re"], dtype=float)
                if "matrix_im" in obj:
                    mat = mat + 1j * np.asarray(obj["matrix_im"], dtype=float)
                if mat.shape != (space.d, space.d):
                    raise MalformedError(f"matrix of shape {mat.shape} for d={space.d}")
                if not np.allclose(mat, mat.conj().T, atol=1e-12):
                    raise MalformedError("matrix is not Hermitian")
                return cls(space, encode_matrix(mat))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MalformedError):
                raise
            raise MalformedError(f"bad element JSON: {exc}") from exc
        raise MalformedError("element JSON needs 'coords' (or 'matrix_re' for quantum)")


def _same_space(a: Element, b: Element):
    if a.space != b.space:
        raise MalformedError(f"space mismatch: {a.space} vs {b.space}")


def element(space: SpaceDescriptor, coords) -> Element:
    return Element(space, np.asarray(coords, dtype=float))


def from_matrix(space: SpaceDescriptor, mat) -> Element:
    """Quantum element from a Hermitian matrix."""
    if space.kind != QUANTUM:
        raise PreconditionError("from_matrix needs a quantum space")
    mat = np.asarray(mat, dtype=complex)
    if mat.shape != (space.d, space.d):
        raise MalformedError(f"matrix of shape {mat.shape} for d={space.d}")
    return Element(space, encode_matrix(mat))


def functional_f(x: Element) -> float:
    """Value of the strictly positive functional defining the base."""
    return float(x.space.f(x.coords))


def cone_contains(x: Element, tol: float = CONE_TOL) -> bool:
    return bool(x.space.contains(x.coords, tol))


def in_base(x: Element, tol: float = CONE_TOL) -> bool:
    return cone_contains(x, tol) and abs(functional_f(x) - 1.0) <= tol


def base_norm(x: Element) -> float:
    """Base norm ``inf{lam >= 0 : x in lam * conv(K u -K)}``.

    Classical: l1 norm. Quantum: trace norm. p-cone: the decomposition
    minimum ``min f(y) + f(z)`` over ``x = y - z`` with ``y, z`` in the
    cone, which equals ``max(|x_0|, ||x_tail||_p)``; see
    :func:`jordan_decompose` for the minimizing pair.
    """
    return float(x.space.norm(x.coords))


def jordan_decompose(x: Element) -> tuple[Element, Element]:
    """Split ``x = y - z`` with ``y, z`` positive and ``f(y) + f(z) = ||x||``."""
    space, c = x.space, x.coords
    if space.kind == CLASSICAL:
        y, z = np.maximum(c, 0.0), np.maximum(-c, 0.0)
    elif space.kind == QUANTUM:
        vals, vecs = np.linalg.eigh(decode_coords(c, space.d))
        pos = (vecs * np.maximum(vals, 0.0)) @ vecs.conj().T
        neg = (vecs * np.maximum(-vals, 0.0)) @ vecs.conj().T
        y, z = encode_matrix(pos), encode_matrix(neg)
    else:
        tail = space.tail_norm(c)
        if c[0] >= tail:
            y, z = c.copy(), np.zeros_like(c)
        elif -c[0] >= tail:
            y, z = np.zeros_like(c), -c
        else:
            # optimum on the segment between 0 and the tail; both cone
            # constraints are tight there
            t = (tail + c[0]) / (2.0 * tail)
            y = np.concatenate([[(tail + c[0]) / 2.0], t * c[1:]])
            z = np.concatenate([[(tail - c[0]) / 2.0], (t - 1.0) * c[1:]])
    return Element(space, y), Element(space, z)


def lemma32_decompose(x: Element, tol: float = 1e-9) -> tuple[Element, Element, float]:
    """Write a zero-functional ``x`` as ``s * (u - v)`` with ``u, v`` in the base.

    ``s`` equals half the base norm of ``x``.
    """
    nrm = base_norm(x)
    if nrm == 0.0:
        raise DegenerateInputError("cannot decompose the zero element")
    if abs(functional_f(x)) > tol * max(1.0, nrm):
        raise PreconditionError(f"f(x) = {functional_f(x):.3e} is not zero")
    y, z = jordan_decompose(x)
    s = nrm / 2.0
    u = Element(x.space, y.coords / functional_f(y))
    v = Element(x.space, z.coords / functional_f(z))
    return u, v, s


def extreme_points(space: SpaceDescriptor, budget: int = 32, seed: int = 0) -> list[Element]:
    """Extreme points of the base used to evaluate suprema.

    The classical space returns its vertices and ignores ``budget``. The
    other spaces return the deterministic axis/basis points followed by
    ``budget`` random extreme points drawn from ``seed``.
    """
    if budget < 1:
        raise PreconditionError("budget must be >= 1")
    pts = space.special_extreme()
    if space.kind != CLASSICAL:
        rng = np.random.default_rng(seed)
        pts = np.hstack([pts, space.sample_extreme(budget, rng)])
    return [Element(space, pts[:, i]) for i in range(pts.shape[1])]


def barycenter(space: SpaceDescriptor) -> Element:
    return Element(space, space.barycenter())
