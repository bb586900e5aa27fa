import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dobrushin.errors import MalformedError, PreconditionError
from dobrushin.operators import (
    amplitude_damping,
    delta_coefficient,
    dobrushin_delta,
    from_kraus,
    identity,
    mixture_with_fixed_point,
    operator_from_json,
    operator_norm,
    power_and_cesaro,
    rank_one,
    rank_one_matrix,
    validate_markov,
)
from dobrushin.harness import random_markov
from dobrushin.spaces import Element, classical, element, from_matrix, pcone, quantum

from oracles import delta_pairs

M = [[0.9, 0.2], [0.1, 0.8]]
M2 = [[0.88, 0.215], [0.12, 0.785]]


def stochastic(n, seed):
    return np.random.default_rng(seed).dirichlet(np.ones(n), size=n).T


# -- validation -----------------------------------------------------------

def test_validate_examples():
    assert validate_markov(M, classical(2)).validated
    bad = validate_markov([[1.1, 0.2], [-0.1, 0.8]], classical(2))
    assert not bad.validated
    (v,) = bad.validation_report
    assert v.kind == "negative_entry" and v.witness == (1, 0)
    assert v.magnitude == pytest.approx(0.1)


def test_validate_detects_f_drift():
    op = validate_markov([[0.9, 0.2], [0.2, 0.8]], classical(2))
    assert [v.kind for v in op.validation_report] == ["f_not_preserved"]


def test_validate_wrong_shape():
    with pytest.raises(MalformedError):
        validate_markov(np.eye(3), classical(2))


def test_amplitude_damping_is_markov():
    T = amplitude_damping(0.5)
    assert T.validated and T.cp_certified
    k1 = np.diag([1.0, np.sqrt(0.5)])
    k2 = np.array([[0.0, np.sqrt(0.5)], [0.0, 0.0]])
    assert np.allclose(k1.T @ k1 + k2.T @ k2, np.eye(2))
    rho = np.array([[0.3, 0.1 + 0.2j], [0.1 - 0.2j, 0.7]])
    out = T(from_matrix(quantum(2), rho)).matrix()
    assert np.allclose(out, k1 @ rho @ k1.T + k2 @ rho @ k2.T)


def test_pcone_cone_violation_is_reported():
    sp = pcone(2, 2.0)
    mat = np.diag([1.0, 1.5, 1.0])
    op = validate_markov(mat, sp)
    assert not op.validated
    assert {v.kind for v in op.validation_report} == {"cone_violation"}


def test_operator_json_round_trip_is_bit_identical():
    T = random_markov(classical(5), 3)
    again = operator_from_json(json.loads(json.dumps(T.to_json())))
    assert np.array_equal(again.matrix, T.matrix)


def test_operator_from_kraus_json():
    obj = {"space": {"kind": "quantum", "d": 2},
           "kraus": [{"re": [[1, 0], [0, 0.5 ** 0.5]]}, {"re": [[0, 0.5 ** 0.5], [0, 0]]}]}
    op = operator_from_json(obj)
    assert np.allclose(op.matrix, amplitude_damping(0.5).matrix)
    with pytest.raises(MalformedError):
        operator_from_json({"space": {"kind": "classical", "n": 2}})


# -- powers and averages --------------------------------------------------

def test_power_and_cesaro_examples(swap):
    T = validate_markov(M, classical(2))
    tn, an = power_and_cesaro(T, 1)
    assert np.allclose(tn.matrix, M) and np.allclose(an.matrix, np.eye(2))
    tn, an = power_and_cesaro(swap, 2)
    assert np.allclose(tn.matrix, np.eye(2)) and np.allclose(an.matrix, 0.5)
    tn, _ = power_and_cesaro(T, 2)
    assert np.allclose(tn.matrix, [[0.83, 0.34], [0.17, 0.66]])
    with pytest.raises(PreconditionError):
        power_and_cesaro(T, 0)


# -- norms and delta ------------------------------------------------------

def test_operator_norm_examples():
    sp = classical(2)
    assert operator_norm(np.array(M) - np.array(M2), sp) == pytest.approx(0.04, abs=1e-12)
    assert operator_norm(np.zeros((2, 2)), sp) == 0.0
    assert operator_norm(np.eye(2), sp) == 1.0


def test_delta_examples(swap):
    T = validate_markov(M, classical(2))
    est = dobrushin_delta(T)
    assert est.value == pytest.approx(0.7, abs=1e-12) and est.certified
    assert est.method == "vertex_enumeration"
    assert dobrushin_delta(identity(classical(3))).value == 1.0
    assert dobrushin_delta(swap).value == 1.0


def test_delta_witness_reproduces_value():
    T = random_markov(classical(6), 11)
    est = dobrushin_delta(T)
    u, v = est.witness_pair
    assert 0.5 * np.abs(T.matrix @ (u.coords - v.coords)).sum() == pytest.approx(est.value, abs=1e-12)


@pytest.mark.parametrize("space", [classical(3), pcone(2, 3.0), quantum(2)])
def test_delta_of_rank_one_is_zero(space):
    y = Element(space, space.barycenter())
    T = rank_one(y)
    assert dobrushin_delta(T).value == pytest.approx(0.0, abs=1e-12)
    x = Element(space, space.special_extreme()[:, 0])
    assert np.allclose(T(x).coords, y.coords)


def test_rank_one_examples():
    T = rank_one(element(classical(2), [2 / 3, 1 / 3]))
    assert np.allclose(T.matrix, [[2 / 3, 2 / 3], [1 / 3, 1 / 3]])
    T = rank_one(element(pcone(1, 2.0), [1.0, 0.0]))
    assert np.allclose(T.matrix, [[1, 0], [0, 0]])
    sp = quantum(2)
    T = rank_one(from_matrix(sp, np.eye(2) / 2))
    rho = np.array([[0.2, 0.3j], [-0.3j, 0.8]])
    assert np.allclose(T(from_matrix(sp, rho)).matrix(), np.eye(2) / 2)
    with pytest.raises(PreconditionError):
        rank_one(element(classical(2), [0.5, 0.6]))


def test_amplitude_damping_delta_estimate():
    T = amplitude_damping(0.5)
    est = dobrushin_delta(T, budget=32)
    assert not est.certified
    assert est.value <= T.delta_upper + 1e-9
    assert est.value == pytest.approx(np.sqrt(0.5), abs=1e-6)


def test_pcone_isometry_has_delta_one():
    from dobrushin.harness import pcone_markov
    sp = pcone(3, 3.0)
    perm = np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 1.0]])
    T = pcone_markov(sp, 1.0, perm)
    assert T.validated and T.delta_upper == 1.0
    assert dobrushin_delta(T).value == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2 ** 31))
def test_delta_matches_column_oracle(n, seed):
    P = stochastic(n, seed)
    assert delta_coefficient(P, classical(n)).value == pytest.approx(delta_pairs(P), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31))
def test_dobrushin_properties(n, seed):
    sp = classical(n)
    P, Q = stochastic(n, seed), stochastic(n, seed + 1)
    dP = delta_coefficient(P, sp).value
    dQ = delta_coefficient(Q, sp).value
    assert 0.0 <= dP <= 1.0
    dD = delta_coefficient(P - Q, sp).value
    assert abs(dP - dQ) <= dD + 1e-12
    assert dD <= operator_norm(P - Q, sp) + 1e-12
    assert delta_coefficient(P @ Q, sp).value <= dP * dQ + 1e-12
    y = np.full(n, 1.0 / n)
    H = (np.eye(n) - rank_one_matrix(y, sp)) @ np.random.default_rng(seed).standard_normal((n, n))
    assert operator_norm(P @ H, sp) <= dP * operator_norm(H, sp) + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_sampled_delta_never_exceeds_pair_value(seed):
    for sp in (classical(4), pcone(2, 2.5), quantum(2)):
        T = random_markov(sp, seed)
        est = dobrushin_delta(T, budget=8, seed=seed)
        assert est.secondary <= est.value + 1e-8


# -- mixtures -------------------------------------------------------------

def test_mixture_examples(swap):
    sp = classical(2)
    phi = element(sp, [0.5, 0.5])
    T1 = mixture_with_fixed_point(identity(sp), phi, 1.0)
    assert np.allclose(T1.matrix, [[0.75, 0.25], [0.25, 0.75]])
    assert dobrushin_delta(T1).value == pytest.approx(0.5)
    T2 = mixture_with_fixed_point(swap, phi, 0.5)
    assert dobrushin_delta(T2).value == pytest.approx(0.75)
    assert T2.delta_upper == pytest.approx(0.75)


def test_mixture_rejects_non_fixed_state():
    T = validate_markov(M, classical(2))
    with pytest.raises(PreconditionError):
        mixture_with_fixed_point(T, element(classical(2), [0.5, 0.5]), 0.5)
    with pytest.raises(PreconditionError):
        mixture_with_fixed_point(T, element(classical(2), [2 / 3, 1 / 3]), 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.floats(0.01, 1.99), st.integers(0, 2 ** 31))
def test_mixture_contracts(n, eps, seed):
    sp = classical(n)
    perm = np.eye(n)[np.random.default_rng(seed).permutation(n)]
    T = validate_markov(perm, sp)
    Te = mixture_with_fixed_point(T, Element(sp, sp.barycenter()), eps)
    assert dobrushin_delta(Te).value <= 1 - eps / 2 + 1e-12
    assert operator_norm(T.matrix - Te.matrix, sp) < eps


def test_from_kraus_shape_error():
    with pytest.raises(MalformedError):
        from_kraus([np.eye(3)], d=2)
