"""Random generators, perturbers and experiment drivers.

Everything here is deterministic given the configured seed. Each trial
derives its own generator from ``(seed, trial, role)`` through
:class:`numpy.random.SeedSequence`, so trials can run on a thread pool and
still produce identical tables; results are merged by trial index.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ergodicity, perturbation
from .errors import CertificationError, NoFixedPointError, PreconditionError
from .operators import (
    MarkovOperator,
    channel_matrix,
    delta_coefficient,
    dobrushin_delta,
    identity,
    mixture_with_fixed_point,
    operator_norm,
    rank_one_matrix,
    validate_markov,
)
from .spaces import (
    CLASSICAL,
    PCONE,
    QUANTUM,
    Element,
    SpaceDescriptor,
    jordan_decompose,
    lemma32_decompose,
)

# role tags for sub-seed derivation
ROLE_T = 1
ROLE_S = 2
ROLE_R = 3
ROLE_PROBE = 4
ROLE_OPEN = 5

MAX_DRAWS = 50
MAX_RETRIES = 8


def sub_seed(seed: int, *keys: int) -> int:
    """64-bit seed derived from ``seed`` and integer keys (trial, role, ...)."""
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1, np.uint64)[0])


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def default_threads() -> int:
    """Thread cap from ``DOBRUSHIN_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("DOBRUSHIN_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ExperimentConfig:
    space: SpaceDescriptor
    trials: int = 100
    seed: int = 0
    perturbation_magnitudes: tuple = (0.01, 0.05, 0.1)
    n_max: int = 512
    horizon: int = 64
    output_path: str | None = None
    delta_budget: int = 16
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "perturbation_magnitudes",
                           tuple(float(m) for m in self.perturbation_magnitudes))
        if self.trials < 1:
            raise PreconditionError("trials must be >= 1")
        if any(not 0.0 < m <= 2.0 for m in self.perturbation_magnitudes):
            raise PreconditionError("perturbation magnitudes must lie in (0, 2]")
        if self.n_max < 1 or self.horizon < 0:
            raise PreconditionError("n_max must be >= 1 and horizon >= 0")
        if self.seed < 0:
            raise PreconditionError("seed must be non-negative")

    def to_json(self) -> dict:
        return {
            "space": self.space.to_json(),
            "trials": self.trials,
            "seed": self.seed,
            "perturbation_magnitudes": list(self.perturbation_magnitudes),
            "n_max": self.n_max,
            "horizon": self.horizon,
            "output_path": self.output_path,
            "delta_budget": self.delta_budget,
            "threads": self.threads,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        kw = dict(obj)
        kw["space"] = SpaceDescriptor.from_json(kw["space"])
        known = set(cls.__dataclass_fields__)
        unknown = set(kw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kw)


def _map_trials(fn, n, threads):
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


# -- generators -----------------------------------------------------------

def signed_permutation(d: int, rng: np.random.Generator) -> np.ndarray:
    q = np.zeros((d, d))
    q[rng.permutation(d), np.arange(d)] = rng.choice([-1.0, 1.0], size=d)
    return q


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def pcone_markov(space: SpaceDescriptor, c0: float, tail_map, ys=(), weights=()) -> MarkovOperator:
    """``c0 R + sum_k c_k T_{y_k}`` where ``R = diag(1, tail_map)``.

    ``tail_map`` must preserve the p-norm of the tail (a signed permutation,
    or a rotation when ``p = 2``); then ``R`` is an isometry of the null
    space and ``delta = c0`` exactly.
    """
    R = np.zeros((space.dim, space.dim))
    R[0, 0] = 1.0
    R[1:, 1:] = tail_map
    mat = c0 * R
    for c, y in zip(weights, ys):
        mat = mat + c * rank_one_matrix(y, space)
    return validate_markov(mat, space, delta_upper=float(c0))


def random_markov(space: SpaceDescriptor, seed: int, mixing: float = 0.0,
                  concentration: float = 1.0, support: int | None = None,
                  rotation: bool = False) -> MarkovOperator:
    """A random Markov operator on ``space``, blended with a fixed rank-one map.

    classical
        Columns from a symmetric Dirichlet(``concentration``), optionally
        restricted to ``support`` random states each; blended with the
        uniform column as ``(1 - mixing) draw + mixing uniform``.
    quantum
        Channel of ``d`` complex Gaussian Kraus matrices normalized by
        ``(sum K^dagger K)^{-1/2}``, blended with the completely depolarizing
        channel. Tagged ``cp_certified``; for ``mixing > 0`` the certified
        ``delta_upper = 1 - mixing`` is attached.
    pcone
        ``c0 R + sum c_k T_{y_k}`` with a signed permutation (or rotation if
        ``rotation`` and ``p = 2``) and two random states ``y_k``; the
        attached ``delta_upper`` is ``(1 - mixing) c0``.
    """
    if not 0.0 <= mixing <= 1.0:
        raise PreconditionError("mixing must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    bary = space.barycenter()
    if space.kind == CLASSICAL:
        n = space.n
        k = n if support is None else max(1, min(int(support), n))
        draw = np.zeros((n, n))
        for j in range(n):
            rows = rng.choice(n, size=k, replace=False) if k < n else np.arange(n)
            draw[rows, j] = rng.dirichlet(np.full(k, concentration))
        mat = (1.0 - mixing) * draw + mixing * rank_one_matrix(bary, space)
        return validate_markov(mat, space, samples=0)
    if space.kind == QUANTUM:
        d = space.d
        g = rng.standard_normal((d, d, d)) + 1j * rng.standard_normal((d, d, d))
        total = sum(k.conj().T @ k for k in g)
        w, v = np.linalg.eigh(total)
        inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
        kraus = [k @ inv_sqrt for k in g]
        mat = (1.0 - mixing) * channel_matrix(kraus, d) + mixing * rank_one_matrix(bary, space)
        # delta of the draw is at most 1, so the blend contracts by 1 - mixing
        ub = 1.0 - mixing if mixing > 0.0 else None
        return validate_markov(mat, space, seed=seed % (2 ** 32), cp_certified=True, delta_upper=ub)
    d = space.d
    if rotation and space.p == 2.0:
        tail = random_rotation(d, rng)
    else:
        tail = signed_permutation(d, rng)
    c = rng.dirichlet(np.ones(3))
    ys = space.sample_extreme(2, rng)
    ys[1:] *= rng.uniform(0.0, 1.0, size=2)
    op = pcone_markov(space, c[0], tail, [ys[:, 0], ys[:, 1]], c[1:])
    if mixing == 0.0:
        return op
    mat = (1.0 - mixing) * op.matrix + mixing * rank_one_matrix(bary, space)
    return validate_markov(mat, space, seed=seed % (2 ** 32), delta_upper=(1.0 - mixing) * c[0])


def _mix_bound(a, b, t):
    if a is None or b is None:
        return None
    return (1.0 - t) * a + t * b


def perturb_with(T: MarkovOperator, R: MarkovOperator, t: float) -> MarkovOperator:
    """``(1 - t) T + t R``, validated, with the convex delta bound carried over."""
    if not 0.0 <= t <= 1.0:
        raise PreconditionError("t must lie in [0, 1]")
    mat = (1.0 - t) * T.matrix + t * R.matrix
    return validate_markov(mat, T.space, samples=16, cp_certified=T.cp_certified and R.cp_certified,
                           delta_upper=_mix_bound(T.delta_upper, R.delta_upper, t))


def perturb_toward(T: MarkovOperator, magnitude: float, seed: int,
                   budget: int = 16) -> MarkovOperator:
    """A Markov ``S = (1 - t) T + t R`` with ``||T - S||`` in ``[0.9, 1] magnitude``.

    Since ``||T - S|| = t ||T - R||`` exactly, ``t`` is solved in closed form
    aiming at ``0.95 magnitude``. When ``R`` is too close to ``T`` to reach
    the band a fresh ``R`` is drawn, at most 8 times.
    """
    if not 0.0 < magnitude <= 2.0:
        raise PreconditionError("magnitude must lie in (0, 2]")
    space = T.space
    for attempt in range(MAX_RETRIES):
        R = random_markov(space, sub_seed(seed, attempt))
        dist = operator_norm(T.matrix - R.matrix, space, budget=budget, seed=seed % (2 ** 32))
        if dist < 0.9 * magnitude:
            continue
        t = min(1.0, 0.95 * magnitude / dist)
        S = perturb_with(T, R, t)
        if S.validated:
            return S
    raise PreconditionError(
        f"could not reach perturbation magnitude {magnitude} after {MAX_RETRIES} draws"
    )


def _classical_cycle(n: int, rng) -> MarkovOperator:
    # a single n-cycle: uniformly mean ergodic but not stable for n >= 2
    order = rng.permutation(n)
    mat = np.zeros((n, n))
    mat[order[(np.arange(n) + 1) % n], order] = 1.0
    return validate_markov(mat, SpaceDescriptor(CLASSICAL, n=n), samples=0)


# -- property suite -------------------------------------------------------

@dataclass
class InvariantRecord:
    """Outcome of one invariant over all trials.

    ``worst_slack`` is the largest ``lhs - rhs`` seen; a trial fails when its
    slack exceeds ``tol`` (or reaches it, for strict inequalities).
    """

    name: str
    tol: float
    strict: bool = False
    trials: int = 0
    failures: int = 0
    skipped: int = 0
    worst_slack: float = -math.inf
    witnesses: list = field(default_factory=list)

    def add(self, slack, witness=None, max_witnesses=5):
        self.trials += 1
        self.worst_slack = max(self.worst_slack, float(slack))
        failed = slack >= self.tol if self.strict else slack > self.tol
        if failed:
            self.failures += 1
            if len(self.witnesses) < max_witnesses:
                self.witnesses.append(witness() if callable(witness) else witness)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "tol": self.tol,
            "strict": self.strict,
            "trials": self.trials,
            "failures": self.failures,
            "skipped": self.skipped,
            "worst_slack": None if math.isinf(self.worst_slack) else self.worst_slack,
            "witnesses": self.witnesses,
        }


# name -> (tolerance, strict)
INVARIANTS = {
    # spaces
    "norm_equals_f_on_cone": (1e-9, False),
    "norm_homogeneity": (1e-8, False),
    "norm_triangle": (1e-8, False),
    "norm_oracle": (1e-9, False),
    "jordan_reconstruction": (1e-8, False),
    "jordan_minimality": (1e-6, False),
    "lemma32_reconstruction": (1e-8, False),
    # operators
    "generator_validity": (0.0, False),
    "dob_i": (1e-9, False),
    "dob_ii_lower": (1e-8, False),
    "dob_ii_upper": (1e-8, False),
    "dob_iii": (1e-9, False),
    "dob_iv": (1e-9, False),
    "dob_v": (1e-8, False),
    "dob_vi": (1e-8, False),
    "eq2_telescoping": (1e-8, False),
    "cesaro_contraction": (1e-9, False),
    # ergodicity
    "submultiplicative_envelope": (1e-9, False),
    "envelope_soundness": (1e-8, False),
    "gap_vs_delta": (1e-9, False),
    "mean_gap_vs_delta": (1e-9, False),
    "mean_tail_decrease": (1e-12, False),
    "fixed_point_uniqueness": (2e-10, False),
    "openness_radius": (0.0, True),
    "mixture_certificate": (1e-9, False),
    # perturbation
    "eq15": (1e-9, False),
    "soundness_eq1": (1e-8, False),
    "soundness_eq5": (1e-8, False),
    "soundness_eq6": (1e-8, False),
    "soundness_eq7": (1e-8, False),
    "soundness_eq8": (1e-8, False),
    "soundness_eq9": (1e-8, False),
    "soundness_eq12": (1e-8, False),
    "soundness_eq14": (1e-8, False),
    "soundness_per62": (1e-8, False),
    "eq12_limit_is_eq9": (1e-8, False),
    "eq8_above_eq9": (1e-12, False),
    "transfer_S_stable": (0.0, False),
    "transfer_fixed_point_agreement": (2e-10, False),
    "transfer_rho_certifies": (1e-9, False),
    "neumann_residual": (1e-8, False),
    "neumann_telescoping": (1e-8, False),
}

FAMILIES = {
    "spaces": ("norm_equals_f_on_cone", "norm_homogeneity", "norm_triangle", "norm_oracle",
               "jordan_reconstruction", "jordan_minimality", "lemma32_reconstruction"),
    "operators": ("generator_validity", "dob_i", "dob_ii_lower", "dob_ii_upper", "dob_iii",
                  "dob_iv", "dob_v", "dob_vi", "eq2_telescoping", "cesaro_contraction"),
    "ergodicity": ("submultiplicative_envelope", "envelope_soundness", "gap_vs_delta",
                   "mean_gap_vs_delta", "mean_tail_decrease", "fixed_point_uniqueness",
                   "openness_radius", "mixture_certificate"),
    "perturbation": ("eq15", "soundness_eq1", "soundness_eq5", "soundness_eq6", "soundness_eq7",
                     "soundness_eq8", "soundness_eq9", "soundness_eq12", "soundness_eq14",
                     "soundness_per62", "eq12_limit_is_eq9", "eq8_above_eq9",
                     "transfer_S_stable", "transfer_fixed_point_agreement",
                     "transfer_rho_certifies", "neumann_residual", "neumann_telescoping"),
}

SKIP = object()


@dataclass
class SuiteResult:
    config: ExperimentConfig
    records: dict

    @property
    def failures(self) -> int:
        return sum(r.failures for r in self.records.values())

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "passed": self.passed,
            "failures": self.failures,
            "records": [r.to_json() for r in self.records.values()],
        }


class _Trial:
    """Collects ``(name, slack, witness)`` events for one trial."""

    def __init__(self, index):
        self.index = index
        self.events = []

    def check(self, name, slack, witness=None):
        self.events.append((name, slack, witness))

    def skip(self, name):
        self.events.append((name, SKIP, None))


def _draw_for_trial(space, seed, t, role=ROLE_T):
    # vary the family so that rank-one, sparse and dense draws all appear
    rng = _rng(seed, t, role, 0)
    s = sub_seed(seed, t, role)
    if t % 5 == 4:
        return random_markov(space, s, mixing=1.0)
    support = None
    if space.kind == CLASSICAL and space.n > 2 and t % 5 in (1, 3):
        support = 2
    mixing = float(rng.uniform(0.0, 0.3)) if t % 5 == 2 else 0.0
    if space.kind == QUANTUM and t % 5 != 0:
        mixing = float(rng.uniform(0.1, 0.6))
    return random_markov(space, s, mixing=mixing, support=support)


def _upper(T: MarkovOperator, value):
    """Certified upper bound on delta(T): exact value or the analytic one."""
    if T.space.exact:
        return value
    return T.delta_upper


def _space_checks(tr, space, rng):
    dim = space.dim
    pts = space.sample_extreme(3, rng)
    w = rng.dirichlet(np.ones(3))
    cone_pt = float(rng.uniform(0.0, 3.0)) * (pts @ w)
    tr.check("norm_equals_f_on_cone", abs(float(space.norm(cone_pt)) - float(space.f(cone_pt))))

    x = rng.standard_normal(dim)
    y = rng.standard_normal(dim)
    c = float(rng.uniform(-3.0, 3.0))
    nx, ny = float(space.norm(x)), float(space.norm(y))
    tr.check("norm_homogeneity", abs(float(space.norm(c * x)) - abs(c) * nx))
    tr.check("norm_triangle", float(space.norm(x + y)) - nx - ny)

    if space.kind == CLASSICAL:
        tr.check("norm_oracle", abs(nx - float(np.abs(x).sum())))
    elif space.kind == QUANTUM:
        tr.check("norm_oracle", abs(nx - float(np.abs(space.eigenvalues(x)).sum())))
    elif space.d == 1:
        tr.check("norm_oracle", abs(nx - max(abs(x[0]), abs(x[1]))))
    else:
        tr.skip("norm_oracle")

    xe = Element(space, x)
    yp, zp = jordan_decompose(xe)
    recon = float(np.max(np.abs(yp.coords - zp.coords - x)))
    cone_def = max(0.0, -min(_cone_margin(space, yp.coords), _cone_margin(space, zp.coords)))
    tr.check("jordan_reconstruction", max(recon, cone_def))
    tr.check("jordan_minimality", float(space.f(yp.coords) + space.f(zp.coords)) - nx)

    a, b = pts[:, 0], pts[:, 1]
    if float(space.norm(a - b)) < 1e-6:
        sp = space.special_extreme()
        a, b = sp[:, 0], sp[:, -1]
    nz = float(rng.uniform(0.1, 3.0)) * (a - b)
    u, v, s = lemma32_decompose(Element(space, nz))
    err = float(space.norm(nz - s * (u.coords - v.coords)))
    err = max(err, abs(float(space.f(u.coords)) - 1.0), abs(float(space.f(v.coords)) - 1.0))
    tr.check("lemma32_reconstruction", err)


def _cone_margin(space, x):
    if space.kind == CLASSICAL:
        return float(x.min())
    if space.kind == PCONE:
        return float(x[0] - space.tail_norm(x))
    return float(space.eigenvalues(x).min())


def _corrupt(T: MarkovOperator) -> np.ndarray:
    mat = T.matrix.copy()
    if T.space.kind == CLASSICAL:
        mat[1, 0] += mat[0, 0] + 0.05
        mat[0, 0] = -0.05
    else:
        mat[1:, :] *= 3.0
    return mat


def _operator_checks(tr, space, T, S, rng, cfg, fault):
    budget, seed = cfg.delta_budget, tr.index
    dT = delta_coefficient(T.matrix, space, budget=budget, seed=seed)
    dS = delta_coefficient(S.matrix, space, budget=budget, seed=seed)

    for op in (T, S):
        tr.check("generator_validity", 0.0 if op.validated else 1.0,
                 lambda op=op: {"trial": tr.index, "operator": op.to_json()})
    if fault is not None:
        tr.check("generator_validity", 0.0 if fault.validated else 1.0,
                 lambda: {"trial": tr.index, "injected": True, "operator": fault.to_json()})

    tr.check("dob_i", max(-dT.value, dT.value - 1.0))
    exact = space.exact
    dTS = delta_coefficient(T.matrix - S.matrix, space, budget=budget, seed=seed)
    if exact:
        nTS = operator_norm(T.matrix - S.matrix, space)
        tr.check("dob_ii_lower", abs(dT.value - dS.value) - dTS.value)
        tr.check("dob_ii_upper", dTS.value - nTS)
    else:
        tr.skip("dob_ii_lower")
        tr.skip("dob_ii_upper")

    uT, uS = _upper(T, dT.value), _upper(S, dS.value)
    if uT is not None and uS is not None:
        dTSp = delta_coefficient(T.matrix @ S.matrix, space, budget=budget, seed=seed)
        tr.check("dob_iii", dTSp.value - uT * uS,
                 lambda: {"trial": tr.index, "T": T.to_json(), "S": S.to_json()})
    else:
        tr.skip("dob_iii")

    if exact:
        y = space.sample_extreme(1, rng)[:, 0]
        G = rng.standard_normal((space.dim, space.dim))
        H = (np.eye(space.dim) - rank_one_matrix(y, space)) @ G
        lhs = operator_norm(T.matrix @ H, space)
        tr.check("dob_iv", lhs - dT.value * operator_norm(H, space))
    else:
        tr.skip("dob_iv")

    tr.check("dob_v", dT.secondary - dT.value)

    if uT is not None and uT <= 1e-10:
        imgs = T.matrix @ space.special_extreme()
        k = imgs.shape[1]
        spread = max((float(space.norm(imgs[:, i] - imgs[:, j]))
                      for i in range(k) for j in range(i + 1, k)), default=0.0)
        tr.check("dob_vi", spread)
    else:
        tr.skip("dob_vi")

    n = int(rng.integers(1, 17))
    D = S.matrix - T.matrix
    Tp = [np.eye(space.dim)]
    Sp = [np.eye(space.dim)]
    for _ in range(n):
        Tp.append(Tp[-1] @ T.matrix)
        Sp.append(Sp[-1] @ S.matrix)
    tele = sum(Tp[n - i - 1] @ D @ Sp[i] for i in range(n))
    tr.check("eq2_telescoping", float(np.max(np.abs(Sp[n] - Tp[n] - tele))))

    n = int(rng.integers(1, 33))
    A = sum(np.linalg.matrix_power(T.matrix, k) for k in range(n)) / n
    lhs = operator_norm(A @ (np.eye(space.dim) - T.matrix), space, budget=budget, seed=seed)
    # Markov operators have norm one
    tr.check("cesaro_contraction", lhs - 2.0 / n)


def _ergodicity_checks(tr, space, T, rng, cfg):
    seed = tr.index
    rep = ergodicity.classify(T, n_max=cfg.n_max, n_check=cfg.horizon, budget=cfg.delta_budget,
                              seed=seed)
    rows = rep.traces
    witness = lambda: {"trial": tr.index, "T": T.to_json(), "report": rep.to_json()}  # noqa: E731
    names = ("submultiplicative_envelope", "envelope_soundness", "gap_vs_delta",
             "mean_gap_vs_delta", "mean_tail_decrease")
    done = set()
    if rep.classification == ergodicity.UAS:
        worst = max((r["delta_Tn"] - rep.rho ** (r["n"] // rep.n0) for r in rows), default=-math.inf)
        if rows:
            tr.check("submultiplicative_envelope", worst, witness)
            done.add("submultiplicative_envelope")
        if rep.envelope_slack is not None:
            tr.check("envelope_soundness", rep.envelope_slack, witness)
            done.add("envelope_soundness")
        if space.exact and rows:
            tr.check("gap_vs_delta", max(r["norm_gap"] - 2 * r["delta_Tn"] for r in rows), witness)
            done.add("gap_vs_delta")
    elif rep.classification == ergodicity.UME_ONLY and space.exact and rows:
        tr.check("mean_gap_vs_delta", max(r["mean_gap"] - 2 * r["delta_An"] for r in rows), witness)
        n0 = rep.mean_n0
        big = n0 * (cfg.horizon // n0)
        by_n = {r["n"]: r["delta_An"] for r in rows}
        if big >= n0 and big in by_n:
            tr.check("mean_tail_decrease", by_n[big] - by_n[n0], witness)
            done.add("mean_tail_decrease")
        done.add("mean_gap_vs_delta")
    for name in names:
        if name not in done:
            tr.skip(name)

    if rep.fixed_point is None:
        tr.skip("fixed_point_uniqueness")
        tr.skip("mixture_certificate")
        tr.skip("openness_radius")
        return
    x1 = rep.fixed_point
    start = Element(space, space.special_extreme()[:, 0])
    try:
        x2 = ergodicity.fixed_point(T, 1e-10, start=start)
        tr.check("fixed_point_uniqueness", float(space.norm(x1.coords - x2.coords)), witness)
    except NoFixedPointError:
        tr.check("fixed_point_uniqueness", math.inf, witness)

    for eps in (0.1, 0.5, 1.0, 1.9):
        Te = mixture_with_fixed_point(T, x1, eps)
        d = dobrushin_delta(Te, budget=cfg.delta_budget, seed=seed).value
        tr.check("mixture_certificate", d - (1.0 - eps / 2.0),
                 lambda Te=Te, eps=eps: {"trial": tr.index, "eps": eps, "T_eps": Te.to_json()})

    if not space.exact:
        tr.skip("openness_radius")
        return
    mean = ergodicity.find_mean_contractive(T, cfg.n_max)
    if mean is None:
        tr.skip("openness_radius")
        return
    n = mean[0]
    r = ergodicity.openness_radius(T, n)
    for k in range(4):
        H = _near(T, r, sub_seed(cfg.seed, tr.index, ROLE_OPEN, k), rng)
        if H is None:
            tr.skip("openness_radius")
            continue
        A = sum(np.linalg.matrix_power(H.matrix, j) for j in range(n)) / n
        d = delta_coefficient(A, space, samples=0).value
        tr.check("openness_radius", d - 1.0,
                 lambda H=H: {"trial": tr.index, "T": T.to_json(), "H": H.to_json(), "radius": r})


def _near(T, radius, seed, rng):
    """A Markov ``H`` with ``||H - T||`` strictly inside ``radius``."""
    space = T.space
    for attempt in range(MAX_RETRIES):
        R = random_markov(space, sub_seed(seed, attempt))
        dist = operator_norm(T.matrix - R.matrix, space)
        if dist <= 0:
            continue
        t = min(1.0, float(rng.uniform(0.05, 0.99)) * radius / dist)
        return perturb_with(T, R, t)
    return None


def _uas_draw(space, cfg, t, role, mag_index=0, n_max=None):
    """Draw until ``find_contractive_power`` succeeds; returns (T, found, rejected)."""
    n_max = cfg.n_max if n_max is None else n_max
    for draw in range(MAX_DRAWS):
        s = sub_seed(cfg.seed, t, role, mag_index, draw)
        support = None
        if space.kind == CLASSICAL and space.n > 2 and (t + draw) % 2 == 1:
            support = 2
        mixing = 0.0
        if space.kind == QUANTUM:
            mixing = float(_rng(cfg.seed, t, role, mag_index, draw).uniform(0.1, 0.6))
        T = random_markov(space, s, mixing=mixing, support=support)
        found = ergodicity.find_contractive_power(T, n_max)
        if found is not None:
            return T, found, draw
    return None, None, MAX_DRAWS


def _perturbation_checks(tr, space, cfg, rng):
    mags = cfg.perturbation_magnitudes
    mag = mags[tr.index % len(mags)]
    T, found, _ = _uas_draw(space, cfg, tr.index, ROLE_S)
    names = FAMILIES["perturbation"]
    if T is None:
        for name in names:
            tr.skip(name)
        return
    S = perturb_toward(T, mag, sub_seed(cfg.seed, tr.index, ROLE_R), budget=cfg.delta_budget)
    try:
        rep = perturbation.tightness_report(T, S, horizon=cfg.horizon, n_max=cfg.n_max,
                                            budget=cfg.delta_budget, seed=tr.index)
    except CertificationError:
        for name in names:
            tr.skip(name)
        return
    witness = lambda: {"trial": tr.index, "T": T.to_json(), "S": S.to_json(),  # noqa: E731
                       "report": rep.to_json()}
    m = rep.m
    if space.exact:
        tr.check("eq15", rep.max_power_gap_incl_m - m * rep.norm_TS, witness)
    else:
        tr.skip("eq15")
    for eq in ("eq1", "eq5", "eq6", "eq7", "eq8", "eq9", "eq12", "eq14", "per62"):
        if eq in rep.worst_slack:
            tr.check("soundness_" + eq, rep.worst_slack[eq], witness)
        else:
            tr.skip("soundness_" + eq)

    dm, eps_m, gap = rep.delta_Tm, rep.norm_TmSm, rep.max_power_gap
    eq9 = rep.bounds["eq9"]
    if 0.0 < dm < 1.0 and math.log(1e-13) / math.log(dm) < 1e7:
        k = math.ceil(math.log(1e-13) / math.log(dm))
        _, off = perturbation.floor_coeffs(m, dm, gap, eps_m, m * k)
        tr.check("eq12_limit_is_eq9", abs(off - eq9), witness)
    elif dm == 0.0:
        _, off = perturbation.floor_coeffs(m, dm, gap, eps_m, m)
        tr.check("eq12_limit_is_eq9", abs(off - eq9), witness)
    else:
        tr.skip("eq12_limit_is_eq9")
    _, off8 = perturbation.delta_coeffs(m, dm, gap, eps_m, m)
    tr.check("eq8_above_eq9", eq9 - off8, witness)

    tf = rep.transfer
    if tf is None or tf.verdict != perturbation.APPLIES:
        for name in ("transfer_S_stable", "transfer_fixed_point_agreement",
                     "transfer_rho_certifies", "neumann_residual", "neumann_telescoping"):
            tr.skip(name)
        return
    if space.exact:
        tr.check("transfer_S_stable", 0.0 if rep.S_certified else 1.0, witness)
    else:
        tr.skip("transfer_S_stable")
    if rep.z0 is not None:
        tr.check("transfer_fixed_point_agreement",
                 float(space.norm(tf.z0.coords - rep.z0.coords)), witness)
    else:
        tr.skip("transfer_fixed_point_agreement")
    if space.exact:
        dSm = delta_coefficient(np.linalg.matrix_power(S.matrix, m), space, samples=0).value
        tr.check("transfer_rho_certifies", dSm - tf.rho, witness)
    else:
        tr.skip("transfer_rho_certifies")
    tr.check("neumann_residual", tf.neumann_residual, witness)

    N = int(rng.integers(1, 65))
    Sm = np.linalg.matrix_power(S.matrix, m)
    x0 = rep.x0.coords
    r0 = x0 - Sm @ x0
    acc, term = np.zeros(space.dim), r0.copy()
    for _ in range(N):
        acc += term
        term = Sm @ term
    rhs = x0 - np.linalg.matrix_power(Sm, N) @ x0
    tr.check("neumann_telescoping", float(space.norm(acc - rhs)), witness)


def run_property_suite(config: ExperimentConfig, inject_fault: bool = False,
                       families=None) -> SuiteResult:
    """Run every invariant over ``config.trials`` random trials.

    ``families`` restricts the run to a subset of ``spaces``, ``operators``,
    ``ergodicity`` and ``perturbation``. With ``inject_fault`` one corrupted
    operator (a negative entry, or a cone-violating stretch off the classical
    space) is validated on trial 0, which must surface as exactly one
    ``generator_validity`` failure.
    """
    families = tuple(FAMILIES) if families is None else tuple(families)
    for fam in families:
        if fam not in FAMILIES:
            raise PreconditionError(f"unknown invariant family {fam!r}")
    space = config.space

    def one(t):
        tr = _Trial(t)
        rng = _rng(config.seed, t, ROLE_PROBE)
        if "spaces" in families:
            _space_checks(tr, space, rng)
        if "operators" in families or "ergodicity" in families:
            T = _draw_for_trial(space, config.seed, t, ROLE_T)
            if t % 7 == 6 and space.kind == CLASSICAL and space.n > 1:
                T = _classical_cycle(space.n, rng)
            if "operators" in families:
                S = _draw_for_trial(space, config.seed, t, ROLE_S)
                fault = None
                if inject_fault and t == 0 and space.dim > 1:
                    fault = validate_markov(_corrupt(T), space, seed=0)
                _operator_checks(tr, space, T, S, rng, config, fault)
            if "ergodicity" in families:
                _ergodicity_checks(tr, space, T, rng, config)
        if "perturbation" in families:
            _perturbation_checks(tr, space, config, rng)
        return tr.events

    per_trial = _map_trials(one, config.trials, config.threads)
    records = {}
    for fam in families:
        for name in FAMILIES[fam]:
            tol, strict = INVARIANTS[name]
            records[name] = InvariantRecord(name, tol, strict)
    for events in per_trial:
        for name, slack, witness in events:
            rec = records[name]
            if slack is SKIP:
                rec.skipped += 1
            else:
                rec.add(slack, witness)
    return SuiteResult(config, records)


# -- experiment tables ----------------------------------------------------

@dataclass
class ExperimentTable:
    header: tuple
    rows: list
    summary: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_cell(row.get(h)) for h in self.header])
        return buf.getvalue()

    def write(self, path: str) -> tuple[str, str]:
        """Write ``path`` (CSV) and ``<stem>.summary.json``; returns both paths."""
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())
        stem, _ = os.path.splitext(path)
        spath = stem + ".summary.json"
        with open(spath, "w") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path, spath

    def column(self, name) -> np.ndarray:
        return np.array([_num(r.get(name)) for r in self.rows], dtype=float)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _num(v):
    if v is None or isinstance(v, str):
        return math.nan
    return float(v)


def _quantiles(values):
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"count": 0}
    return {
        "count": int(v.size),
        "min": float(v.min()),
        "q10": float(np.quantile(v, 0.1)),
        "median": float(np.median(v)),
        "q90": float(np.quantile(v, 0.9)),
        "max": float(v.max()),
    }


TIGHTNESS_HEADER = (
    "space", "dim", "magnitude", "trial", "status", "rejected_draws", "m",
    "delta_Tm", "norm_TS", "norm_TmSm",
    "bound_eq6", "bound_eq9", "bound_eq12_inf", "bound_per62", "bound_eq14_literal",
    "actual", "ratio_eq6", "ratio_eq9", "ratio_eq12_inf", "ratio_per62",
    "slack_eq1", "slack_eq5", "slack_eq6", "slack_eq7", "slack_eq8", "slack_eq9",
    "slack_eq12", "slack_eq14", "slack_per62",
    "transfer_verdict", "transfer_margin", "S_uas", "S_certified", "z0_gap", "neumann_residual", "sound",
)

SLACK_EQS = ("eq1", "eq5", "eq6", "eq7", "eq8", "eq9", "eq12", "eq14", "per62")


def space_label(space: SpaceDescriptor) -> str:
    """Compact label ``classical:N``, ``pcone:D:P`` or ``quantum:D``."""
    if space.kind == CLASSICAL:
        return f"classical:{space.n}"
    if space.kind == PCONE:
        return f"pcone:{space.d}:{space.p!r}"
    return f"quantum:{space.d}"


def _tightness_row(space, cfg, mi, mag, t):
    row = {"space": space_label(space), "dim": space.dim, "magnitude": mag, "trial": t}
    T, found, rejected = _uas_draw(space, cfg, t, ROLE_T, mi)
    row["rejected_draws"] = rejected
    if T is None:
        row["status"] = "skipped"
        return row
    S = perturb_toward(T, mag, sub_seed(cfg.seed, t, ROLE_R, mi), budget=cfg.delta_budget)
    rep = perturbation.tightness_report(T, S, m=found[0], horizon=cfg.horizon, n_max=cfg.n_max,
                                        budget=cfg.delta_budget, seed=t)
    row["status"] = "ok"
    row["m"] = rep.m
    row["delta_Tm"] = rep.delta_Tm
    row["norm_TS"] = rep.norm_TS
    row["norm_TmSm"] = rep.norm_TmSm
    b = rep.bounds
    row["bound_eq6"] = b.get("eq6")
    row["bound_eq9"] = b.get("eq9")
    row["bound_eq12_inf"] = b.get("eq12_limit")
    row["bound_per62"] = b.get("per62")
    row["bound_eq14_literal"] = b.get("eq14_literal")
    stat = rep.actual_stationary_distance
    actual = 0.5 * (stat[0] + stat[1]) if isinstance(stat, tuple) else stat
    row["actual"] = actual
    if actual is not None:
        for key in ("eq6", "eq9", "eq12_inf", "per62"):
            bnd = row["bound_" + key]
            if bnd is not None:
                row["ratio_" + key] = perturbation._ratio(actual, bnd)
    for eq in SLACK_EQS:
        row["slack_" + eq] = rep.worst_slack.get(eq)
    tf = rep.transfer
    row["transfer_verdict"] = tf.verdict
    row["transfer_margin"] = tf.margin
    row["S_uas"] = rep.S_uas
    row["S_certified"] = rep.S_certified
    if tf.verdict == perturbation.APPLIES:
        row["neumann_residual"] = tf.neumann_residual
        if rep.z0 is not None:
            row["z0_gap"] = float(space.norm(tf.z0.coords - rep.z0.coords))
    row["sound"] = rep.sound
    return row


def tightness_experiment(config: ExperimentConfig) -> ExperimentTable:
    """Bound-versus-actual table over random stable ``T`` and nearby ``S``.

    One row per (magnitude, trial). ``T`` is redrawn until a contracting
    power is found (at most 50 draws, otherwise the row is ``skipped``);
    ``m`` is that power. Summary quantiles of the tightness ratios are given
    per magnitude, together with rejection counts.
    """
    space = config.space
    jobs = [(mi, mag, t) for mi, mag in enumerate(config.perturbation_magnitudes)
            for t in range(config.trials)]
    rows = _map_trials(lambda i: _tightness_row(space, config, *jobs[i]), len(jobs),
                       config.threads)
    summary = {"config": config.to_json(), "per_magnitude": {}}
    for mag in config.perturbation_magnitudes:
        sub = [r for r in rows if r["magnitude"] == mag]
        ok = [r for r in sub if r["status"] == "ok"]
        entry = {
            "rows": len(sub),
            "skipped": len(sub) - len(ok),
            "rejected_draws": int(sum(r["rejected_draws"] for r in sub)),
            "transfer_applies": sum(r.get("transfer_verdict") == perturbation.APPLIES for r in ok),
            "unsound_rows": sum(not r.get("sound", True) for r in ok),
        }
        for key in ("eq6", "eq9", "eq12_inf", "per62"):
            entry["ratio_" + key] = _quantiles(r.get("ratio_" + key) for r in ok)
        slacks = [r.get("slack_" + eq) for r in ok for eq in SLACK_EQS]
        slacks = [s for s in slacks if s is not None]
        entry["worst_slack"] = max(slacks) if slacks else None
        summary["per_magnitude"][repr(mag)] = entry
    table = ExperimentTable(TIGHTNESS_HEADER, rows, summary)
    if config.output_path:
        table.write(config.output_path)
    return table


DENSITY_HEADER = (
    "space", "dim", "trial", "kind", "epsilon", "delta_T", "delta_Teps", "delta_Teps_upper",
    "delta_bound", "delta_ok", "delta_certified", "classification", "n0", "norm_T_Teps",
    "norm_ok", "open_n", "open_radius", "open_samples", "open_failures", "open_max_delta",
)

DENSITY_KINDS = ("identity", "permutation", "noncontracting")


def _density_base(space, kind, rng):
    """An operator of the given kind and one of its fixed states."""
    bary = Element(space, space.barycenter())
    if kind == "identity":
        return identity(space), bary
    if space.kind == CLASSICAL:
        n = space.n
        if kind == "permutation":
            mat = np.zeros((n, n))
            mat[rng.permutation(n), np.arange(n)] = 1.0
            return validate_markov(mat, space, samples=0), bary
        if n < 2:
            return identity(space), bary
        k = int(rng.integers(1, n))
        order = rng.permutation(n)
        blocks = (order[:k], order[k:])
        mat = np.zeros((n, n))
        for blk in blocks:
            mat[np.ix_(blk, blk)] = rng.dirichlet(np.ones(len(blk)), size=len(blk)).T
        T = validate_markov(mat, space, samples=0)
        return T, ergodicity.fixed_point(T)
    if space.kind == QUANTUM:
        d = space.d
        U = random_unitary(d, rng)
        if kind == "permutation":
            return validate_markov(channel_matrix([U], d), space, cp_certified=True,
                                   delta_upper=1.0), bary
        V = random_unitary(d, rng)
        q = float(rng.uniform(0.2, 0.8))
        projs = [np.sqrt(q) * np.outer(V[:, i], V[:, i].conj()) @ U for i in range(d)]
        kraus = [np.sqrt(1.0 - q) * U] + projs
        return validate_markov(channel_matrix(kraus, d), space, cp_certified=True,
                               delta_upper=1.0), bary
    tail = signed_permutation(space.d, rng)
    if kind == "noncontracting" and space.p == 2.0:
        tail = random_rotation(space.d, rng)
    return pcone_markov(space, 1.0, tail), bary


def _density_rows(space, cfg, epsilons, t, open_samples):
    rows = []
    for ki, kind in enumerate(DENSITY_KINDS):
        rng = _rng(cfg.seed, t, ROLE_T, ki)
        T, phi = _density_base(space, kind, rng)
        dT = dobrushin_delta(T, budget=cfg.delta_budget, seed=t).value
        for ei, eps in enumerate(epsilons):
            Te = mixture_with_fixed_point(T, phi, eps)
            est = dobrushin_delta(Te, budget=cfg.delta_budget, seed=t)
            row = {"space": space_label(space), "dim": space.dim, "trial": t, "kind": kind,
                   "epsilon": float(eps), "delta_T": dT, "delta_Teps": est.value,
                   "delta_Teps_upper": Te.delta_upper, "delta_bound": 1.0 - eps / 2.0,
                   "delta_certified": est.certified}
            row["delta_ok"] = est.value <= 1.0 - eps / 2.0 + 1e-10
            rep = ergodicity.classify(Te, n_max=cfg.n_max, n_check=cfg.horizon, traces=False)
            row["classification"] = rep.classification
            row["n0"] = rep.n0
            gap = operator_norm(T.matrix - Te.matrix, space, budget=cfg.delta_budget, seed=t)
            row["norm_T_Teps"] = gap
            row["norm_ok"] = gap < eps
            mean = ergodicity.find_mean_contractive(Te, cfg.n_max)
            if mean is not None:
                n = mean[0]
                r = ergodicity.openness_radius(Te, n)
                row["open_n"], row["open_radius"] = n, r
                orng = _rng(cfg.seed, t, ROLE_OPEN, ki, ei)
                fails, worst, count = 0, 0.0, 0
                for k in range(open_samples):
                    H = _near(Te, r, sub_seed(cfg.seed, t, ROLE_OPEN, ki, ei, k), orng)
                    if H is None:
                        continue
                    A = sum(np.linalg.matrix_power(H.matrix, j) for j in range(n)) / n
                    d = delta_coefficient(A, space, budget=cfg.delta_budget, seed=k,
                                          samples=0 if space.exact else None).value
                    count += 1
                    worst = max(worst, d)
                    fails += d >= 1.0
                row["open_samples"] = count
                row["open_failures"] = fails
                row["open_max_delta"] = worst
            rows.append(row)
    return rows


def density_experiment(config: ExperimentConfig, epsilons=(0.1, 0.5, 1.0, 1.9),
                       open_samples: int = 100) -> ExperimentTable:
    """Constructive density witnesses ``T^eps = (1 - eps/2) T + (eps/2) T_phi``.

    For the identity, a random permutation-type operator and a random
    non-contracting operator (block-diagonal classically, a dephased unitary
    channel on the quantum space, a norm-preserving map on the p-cone), each
    mixture is checked for ``delta <= 1 - eps/2``, stability and
    ``||T - T^eps|| < eps``. Around every mixture, ``open_samples`` random
    Markov ``H`` inside the openness radius are tested for ``delta(A_n(H)) < 1``.
    Off the classical space these deltas are sampled lower bounds, so a
    success there means "not refuted".
    """
    epsilons = [float(e) for e in epsilons]
    if any(not 0.0 < e < 2.0 for e in epsilons):
        raise PreconditionError("each epsilon must lie in (0, 2)")
    space = config.space
    per_trial = _map_trials(lambda t: _density_rows(space, config, epsilons, t, open_samples),
                            config.trials, config.threads)
    rows = [r for chunk in per_trial for r in chunk]
    summary = {
        "config": config.to_json(),
        "epsilons": epsilons,
        "rows": len(rows),
        "delta_ok": sum(bool(r["delta_ok"]) for r in rows),
        "norm_ok": sum(bool(r["norm_ok"]) for r in rows),
        "uas": sum(r["classification"] == ergodicity.UAS for r in rows),
        "open_samples": sum(r.get("open_samples", 0) for r in rows),
        "open_failures": sum(r.get("open_failures", 0) for r in rows),
        "delta_certified": space.exact,
    }
    table = ExperimentTable(DENSITY_HEADER, rows, summary)
    if config.output_path:
        table.write(config.output_path)
    return table
