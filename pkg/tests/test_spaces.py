import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dobrushin.errors import DegenerateInputError, MalformedError, PreconditionError
from dobrushin.spaces import (
    Element,
    SpaceDescriptor,
    base_norm,
    classical,
    cone_contains,
    decode_coords,
    element,
    encode_matrix,
    extreme_points,
    from_matrix,
    functional_f,
    hermitian_basis,
    in_base,
    jordan_decompose,
    lemma32_decompose,
    pcone,
    quantum,
)

from oracles import pcone_norm_grid, random_hermitian, trace_norm

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def qdiag(*vals):
    return from_matrix(quantum(len(vals)), np.diag(vals))


# -- descriptors ----------------------------------------------------------

def test_dimensions():
    assert classical(5).dim == 5
    assert pcone(3, 2.5).dim == 4
    assert quantum(3).dim == 9


@pytest.mark.parametrize("bad", [
    dict(kind="classical", n=0),
    dict(kind="pcone", d=2, p=1.0),
    dict(kind="pcone", d=2, p=float("inf")),
    dict(kind="quantum", d=0),
    dict(kind="simplex", n=2),
])
def test_bad_descriptors(bad):
    with pytest.raises(MalformedError):
        SpaceDescriptor(**bad)


def test_descriptor_json_round_trip():
    for sp in (classical(4), pcone(2, 3.0), quantum(2)):
        assert SpaceDescriptor.from_json(sp.to_json()) == sp


def test_hermitian_basis_is_orthonormal():
    for d in (1, 2, 3, 4):
        B = hermitian_basis(d)
        gram = np.einsum("iab,jba->ij", B, B)
        assert np.allclose(gram, np.eye(d * d), atol=1e-12)
        assert np.allclose(B, np.conj(np.swapaxes(B, 1, 2)))


def test_encode_decode_round_trip(rng):
    H = random_hermitian(3, rng)
    assert np.allclose(decode_coords(encode_matrix(H), 3), H)


# -- functional and cone --------------------------------------------------

def test_functional_examples():
    assert functional_f(element(classical(2), [0.3, 0.7])) == pytest.approx(1.0)
    assert functional_f(element(pcone(1, 2.0), [2.0, 0.5])) == 2.0
    assert functional_f(qdiag(0.5, 0.5)) == pytest.approx(1.0)


def test_functional_dimension_mismatch():
    with pytest.raises(MalformedError):
        functional_f(element(classical(3), [0.5, 0.5]))


def test_cone_examples():
    assert cone_contains(element(classical(2), [0.2, 0.8]), tol=0)
    assert cone_contains(element(pcone(2, 2.0), [1.0, 0.6, 0.8]))
    assert not cone_contains(qdiag(0.5, -0.1))
    assert in_base(qdiag(0.3, 0.7))


# -- base norm ------------------------------------------------------------

def test_norm_examples():
    assert base_norm(element(classical(2), [0.3, -0.3])) == pytest.approx(0.6)
    assert base_norm(element(pcone(1, 3.0), [0.5, 1.0])) == pytest.approx(1.0)
    assert base_norm(qdiag(0.5, -0.5)) == pytest.approx(1.0)


@pytest.mark.parametrize("d,p", [(2, 2.0), (2, 3.0), (3, 1.5)])
def test_pcone_norm_matches_grid_oracle(d, p, rng):
    sp = pcone(d, p)
    for _ in range(3):
        x = rng.standard_normal(d + 1)
        assert base_norm(element(sp, x)) == pytest.approx(pcone_norm_grid(x, p), abs=1e-5)


def test_quantum_norm_matches_trace_norm(rng):
    for d in (2, 3):
        for _ in range(10):
            H = random_hermitian(d, rng)
            assert base_norm(from_matrix(quantum(d), H)) == pytest.approx(trace_norm(H), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 2, elements=finite), st.sampled_from([1.2, 2.0, 4.0]))
def test_pcone_d1_closed_form(x, p):
    assert base_norm(element(pcone(1, p), x)) == pytest.approx(max(abs(x[0]), abs(x[1])), abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite), finite)
def test_norm_axioms(x, y, c):
    for sp in (classical(4), pcone(3, 3.0), quantum(2)):
        X, Y = element(sp, x), element(sp, y)
        assert base_norm(X * c) == pytest.approx(abs(c) * base_norm(X), rel=1e-9, abs=1e-8)
        assert base_norm(X + Y) <= base_norm(X) + base_norm(Y) + 1e-8


@settings(max_examples=50, deadline=None)
@given(arrays(float, 6, elements=st.floats(0, 10)))
def test_norm_equals_f_on_cone(w):
    for sp in (classical(4), pcone(3, 2.0), quantum(2)):
        pts = sp.special_extreme()
        x = pts @ w[: pts.shape[1]]
        assert base_norm(element(sp, x)) == pytest.approx(float(sp.f(x)), abs=1e-9)


# -- decompositions -------------------------------------------------------

def test_jordan_examples():
    y, z = jordan_decompose(element(classical(2), [0.3, -0.3]))
    assert np.allclose(y.coords, [0.3, 0]) and np.allclose(z.coords, [0, 0.3])

    y, z = jordan_decompose(qdiag(0.7, -0.2))
    assert np.allclose(y.matrix(), np.diag([0.7, 0])) and np.allclose(z.matrix(), np.diag([0, 0.2]))

    y, z = jordan_decompose(element(pcone(1, 2.0), [0.0, 1.0]))
    assert np.allclose(y.coords, [0.5, 0.5]) and np.allclose(z.coords, [0.5, -0.5])


@settings(max_examples=60, deadline=None)
@given(arrays(float, 4, elements=finite))
def test_jordan_reconstructs(x):
    for sp in (classical(4), pcone(3, 1.5), pcone(3, 3.0), quantum(2)):
        X = element(sp, x)
        y, z = jordan_decompose(X)
        assert np.max(np.abs(y.coords - z.coords - x)) <= 1e-8
        assert cone_contains(y) and cone_contains(z)
        assert functional_f(y) + functional_f(z) - base_norm(X) <= 1e-6


def test_lemma32_examples():
    u, v, s = lemma32_decompose(element(classical(2), [0.3, -0.3]))
    assert np.allclose(u.coords, [1, 0]) and np.allclose(v.coords, [0, 1]) and s == pytest.approx(0.3)

    u, v, s = lemma32_decompose(qdiag(0.4, -0.4))
    assert np.allclose(u.matrix(), np.diag([1, 0])) and np.allclose(v.matrix(), np.diag([0, 1]))
    assert s == pytest.approx(0.4)

    u, v, s = lemma32_decompose(element(pcone(1, 2.0), [0.0, 1.0]))
    assert np.allclose(u.coords, [1, 1]) and np.allclose(v.coords, [1, -1]) and s == pytest.approx(0.5)


def test_lemma32_errors():
    with pytest.raises(DegenerateInputError):
        lemma32_decompose(element(classical(2), [0.0, 0.0]))
    with pytest.raises(PreconditionError):
        lemma32_decompose(element(classical(2), [0.5, 0.1]))


@settings(max_examples=60, deadline=None)
@given(arrays(float, 4, elements=finite))
def test_lemma32_reconstructs(x):
    for sp in (classical(4), pcone(3, 2.0), quantum(2)):
        # project onto the null space of f
        fv = sp.f_vector
        xn = x - fv * (fv @ x) / (fv @ fv)
        if base_norm(element(sp, xn)) < 1e-9:
            continue
        u, v, s = lemma32_decompose(element(sp, xn))
        assert functional_f(u) == pytest.approx(1.0) and functional_f(v) == pytest.approx(1.0)
        assert base_norm(element(sp, xn - s * (u.coords - v.coords))) <= 1e-8


# -- extreme points and serialization -------------------------------------

def test_extreme_points():
    pts = [tuple(p.coords) for p in extreme_points(classical(3))]
    assert pts == [(1, 0, 0), (0, 1, 0), (0, 0, 1)]

    pts = {tuple(p.coords) for p in extreme_points(pcone(2, 2.0), budget=4)}
    assert {(1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1)} <= pts

    mats = [p.matrix() for p in extreme_points(quantum(2), budget=3)]
    assert any(np.allclose(m, np.diag([1, 0])) for m in mats)
    assert any(np.allclose(m, np.diag([0, 1])) for m in mats)
    assert all(in_base(p) for p in extreme_points(quantum(3), budget=5))


def test_element_json_round_trip():
    x = from_matrix(quantum(2), np.array([[0.6, 0.1 - 0.2j], [0.1 + 0.2j, 0.4]]))
    y = Element.from_json(x.to_json())
    assert y.space == x.space and np.array_equal(y.coords, x.coords)
    with pytest.raises(MalformedError):
        Element.from_json({"space": {"kind": "classical", "n": 2}})
