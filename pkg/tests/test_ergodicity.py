import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dobrushin.ergodicity import (
    UAS,
    UME_ONLY,
    UNDETERMINED,
    classify,
    envelope_value,
    find_contractive_power,
    find_mean_contractive,
    fixed_point,
    geometric_envelope,
    n_tilde,
    openness_radius,
)
from dobrushin.errors import CertificationError, NoFixedPointError, PreconditionError
from dobrushin.harness import random_markov
from dobrushin.operators import amplitude_damping, dobrushin_delta, identity, validate_markov
from dobrushin.spaces import classical, quantum

from oracles import stationary


def test_contractive_power_examples(worked_pair, swap):
    T, _ = worked_pair
    n0, rho = find_contractive_power(T)
    assert n0 == 1 and rho == pytest.approx(0.7)
    assert find_contractive_power(swap, n_max=64) is None
    assert find_contractive_power(identity(classical(3)), n_max=16) is None


def test_contractive_power_needs_more_than_one_step():
    T = validate_markov([[1.0, 0.0, 0.5], [0.0, 0.0, 0.5], [0.0, 1.0, 0.0]], classical(3))
    assert dobrushin_delta(T).value == 1.0
    n0, rho = find_contractive_power(T)
    assert n0 == 2 and rho < 1


def test_mean_contractive_examples(worked_pair, swap):
    assert find_mean_contractive(swap) == (2, 0.0)
    T, _ = worked_pair
    n, d = find_mean_contractive(T, threshold=0.9)
    assert n == 2 and d == pytest.approx(0.85)
    assert find_mean_contractive(identity(classical(2)), n_max=32) is None


def test_geometric_envelope_examples():
    C, alpha, nt = geometric_envelope(1, 0.7, scale=1.0)
    assert C == pytest.approx(1.428571, abs=1e-6)
    assert alpha == pytest.approx(0.356675, abs=1e-6)
    assert nt == 1
    C, alpha, nt = geometric_envelope(3, 0.5, scale=1.0)
    assert C == 2.0 and alpha == pytest.approx(math.log(2) / 3) and nt == 3
    C, alpha, nt = geometric_envelope(1, 0.7)
    assert C == pytest.approx(2 / 0.7) and nt == 3
    assert geometric_envelope(2, 0.0) == (1.0, math.inf, 2)
    with pytest.raises(PreconditionError):
        geometric_envelope(0, 0.5)
    with pytest.raises(PreconditionError):
        geometric_envelope(1, 1.0)


def test_n_tilde_is_first_index_below_one():
    assert n_tilde(1.0, 0.3) == 0
    assert n_tilde(2.0, math.log(2)) == 1
    assert n_tilde(5.0, math.inf) == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.floats(1e-3, 0.999), st.floats(1.0, 3.0))
def test_envelope_dominates_delta_powers(n0, rho, scale):
    C, alpha, nt = geometric_envelope(n0, rho, scale)
    assert C * math.exp(-alpha * nt) <= 1 + 1e-12
    if nt > 0:
        assert C * math.exp(-alpha * (nt - 1)) > 1 - 1e-12
    for n in range(0, 6 * n0):
        assert scale * rho ** (n // n0) <= envelope_value(C, alpha, n) * (1 + 1e-12)


def test_fixed_point_examples(worked_pair):
    T, S = worked_pair
    x0 = fixed_point(T)
    assert np.allclose(x0.coords, [2 / 3, 1 / 3], atol=1e-12)
    z0 = fixed_point(S)
    assert np.allclose(z0.coords, [43 / 67, 24 / 67], atol=1e-12)


def test_fixed_point_of_amplitude_damping():
    x0 = fixed_point(amplitude_damping(0.5))
    assert np.allclose(x0.matrix(), [[1, 0], [0, 0]], atol=1e-10)


def test_fixed_point_of_swap_is_barycenter(swap):
    assert np.allclose(fixed_point(swap).coords, [0.5, 0.5])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 31))
def test_fixed_point_matches_eigen_oracle(n, seed):
    T = random_markov(classical(n), seed)
    x = fixed_point(T).coords
    assert np.abs(x - stationary(T.matrix)).sum() <= 1e-9


def test_fixed_point_cycle_and_failure_path():
    T = validate_markov([[0, 1, 0], [0, 0, 1], [1, 0, 0.0]], classical(3))
    assert np.allclose(fixed_point(T).coords, 1 / 3)
    with pytest.raises(NoFixedPointError):
        fixed_point(T, tol=-1.0, iter_max=2)


def test_classify_examples(worked_pair, swap):
    T, _ = worked_pair
    rep = classify(T, n_check=32)
    assert rep.classification == UAS
    assert rep.n0 == 1 and rep.rho == pytest.approx(0.7)
    assert np.allclose(rep.fixed_point.coords, [2 / 3, 1 / 3])
    assert rep.envelope_slack <= 0
    rep = classify(swap, n_check=16)
    assert rep.classification == UME_ONLY and rep.mean_n0 == 2 and rep.mean_rho == 0.0
    assert rep.tail_gap <= 2 / 16 + 1e-12
    rep = classify(identity(classical(2)), n_max=32, n_check=8)
    assert rep.classification == UNDETERMINED and rep.fixed_point is None
    assert len(rep.traces) == 8


def test_classify_json_keys(worked_pair):
    out = classify(worked_pair[0], n_check=8).to_json()
    assert out["classification"] == UAS
    assert out["alpha_infinite"] is False
    assert len(out["traces"]) == 8


def test_classify_quantum_needs_attestation():
    T = amplitude_damping(0.5)
    assert classify(T, n_check=16, traces=False).classification == UAS
    T2 = validate_markov(T.matrix, quantum(2))
    rep = classify(T2, n_max=16, n_check=8, traces=False)
    assert rep.classification == UNDETERMINED and not rep.certified
    rep = classify(T2, n_check=16, delta_upper=math.sqrt(0.5), traces=False)
    assert rep.classification == UAS and rep.delta_upper_attested == pytest.approx(math.sqrt(0.5))


def test_openness_radius_examples(worked_pair, swap):
    T, _ = worked_pair
    assert openness_radius(swap, 2) == pytest.approx(2 / 3)
    assert openness_radius(T, 2) == pytest.approx(0.1)
    with pytest.raises(PreconditionError):
        openness_radius(T, 1)
    with pytest.raises(CertificationError):
        openness_radius(validate_markov(np.eye(4), quantum(2)), 2)
