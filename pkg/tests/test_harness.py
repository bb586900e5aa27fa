import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dobrushin.errors import PreconditionError
from dobrushin.ergodicity import UAS, classify
from dobrushin.harness import (
    DENSITY_HEADER,
    FAMILIES,
    INVARIANTS,
    TIGHTNESS_HEADER,
    ExperimentConfig,
    density_experiment,
    pcone_markov,
    perturb_toward,
    perturb_with,
    random_markov,
    run_property_suite,
    space_label,
    sub_seed,
    tightness_experiment,
)
from dobrushin.operators import (
    dobrushin_delta,
    identity,
    mixture_with_fixed_point,
    operator_norm,
    rank_one,
    validate_markov,
)
from dobrushin.spaces import classical, element, pcone, quantum

SPACES = [classical(2), classical(5), pcone(1, 2.0), pcone(2, 3.0), pcone(3, 1.5), quantum(2)]


# -- configuration ----------------------------------------------------------

def test_config_validation():
    with pytest.raises(PreconditionError):
        ExperimentConfig(classical(2), trials=0)
    with pytest.raises(PreconditionError):
        ExperimentConfig(classical(2), perturbation_magnitudes=(0.0,))
    with pytest.raises(PreconditionError):
        ExperimentConfig(classical(2), perturbation_magnitudes=(2.5,))


def test_config_json_round_trip():
    cfg = ExperimentConfig(pcone(2, 3.0), trials=7, seed=3, perturbation_magnitudes=(0.02,))
    again = ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_json({**cfg.to_json(), "bogus": 1})


def test_sub_seeds_are_stable_and_distinct():
    assert sub_seed(42, 1, 2) == sub_seed(42, 1, 2)
    seeds = {sub_seed(42, t, r) for t in range(50) for r in range(5)}
    assert len(seeds) == 250


def test_space_label():
    assert space_label(classical(4)) == "classical:4"
    assert space_label(pcone(2, 3.0)) == "pcone:2:3.0"
    assert space_label(quantum(2)) == "quantum:2"


# -- generators -------------------------------------------------------------

@pytest.mark.parametrize("space", SPACES, ids=space_label)
def test_generated_operators_validate(space):
    for seed in range(20):
        for mixing in (0.0, 0.3):
            T = random_markov(space, seed, mixing=mixing)
            assert T.validated, T.validation_report
    if space.kind == "quantum":
        assert random_markov(space, 0).cp_certified


def test_random_markov_is_reproducible():
    for space in SPACES:
        a, b = random_markov(space, 17), random_markov(space, 17)
        assert np.array_equal(a.matrix, b.matrix)


def test_full_mixing_is_rank_one():
    T = random_markov(classical(5), 3, mixing=1.0)
    assert np.allclose(T.matrix, 0.2)
    assert dobrushin_delta(T).value == pytest.approx(0.0, abs=1e-15)


def test_support_and_rotation_options():
    T = random_markov(classical(6), 1, support=2)
    assert ((T.matrix > 0).sum(axis=0) <= 2).all()
    R = random_markov(pcone(3, 2.0), 1, rotation=True)
    assert R.validated


def test_pcone_isometry_generator():
    sp = pcone(2, 4.0)
    T = pcone_markov(sp, 1.0, np.diag([1.0, -1.0]))
    assert T.validated
    assert dobrushin_delta(T).value == pytest.approx(1.0, abs=1e-9)


def test_perturb_with_worked_example(worked_pair):
    T, S = worked_pair
    R = rank_one(element(classical(2), [0.5, 0.5]))
    out = perturb_with(T, R, 0.05)
    assert np.allclose(out.matrix, S.matrix)
    assert operator_norm(T.matrix - out.matrix, T.space) == pytest.approx(0.04)
    with pytest.raises(PreconditionError):
        perturb_with(T, R, 1.5)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(SPACES), st.floats(0.005, 0.5), st.integers(0, 2 ** 31))
def test_perturb_toward_hits_band(space, mag, seed):
    T = random_markov(space, seed)
    S = perturb_toward(T, mag, seed)
    assert S.validated
    if space.exact:
        gap = operator_norm(T.matrix - S.matrix, space)
        assert 0.9 * mag - 1e-12 <= gap <= mag + 1e-12


def test_perturb_toward_rejects_bad_magnitude(worked_pair):
    with pytest.raises(PreconditionError):
        perturb_toward(worked_pair[0], 0.0, 1)


def test_perturb_toward_gives_up_when_unreachable():
    T = validate_markov([[1.0]], classical(1))
    with pytest.raises(PreconditionError):
        perturb_toward(T, 0.5, 0)


# -- property suite ---------------------------------------------------------

def test_suite_single_trial():
    res = run_property_suite(ExperimentConfig(classical(3), trials=1, horizon=8, n_max=32))
    assert res.passed
    for rec in res.records.values():
        assert rec.trials + rec.skipped >= 1
    assert set(res.records) == set(INVARIANTS)


def test_suite_families_filter():
    cfg = ExperimentConfig(classical(4), trials=5)
    res = run_property_suite(cfg, families=["operators"])
    assert set(res.records) == set(FAMILIES["operators"])


@pytest.mark.parametrize("space", [classical(4), pcone(2, 3.0), quantum(2)], ids=space_label)
def test_suite_passes(space):
    res = run_property_suite(ExperimentConfig(space, trials=8, horizon=16, n_max=64))
    assert res.passed, [r.to_json() for r in res.records.values() if r.failures]


def test_fault_injection_is_the_only_failure():
    res = run_property_suite(ExperimentConfig(classical(3), trials=4, horizon=8),
                             inject_fault=True, families=["operators"])
    bad = {k: r.failures for k, r in res.records.items() if r.failures}
    assert bad == {"generator_validity": 1}
    assert res.records["generator_validity"].witnesses


def test_suite_json_is_deterministic():
    cfg = ExperimentConfig(classical(3), trials=3, seed=9, horizon=8)
    a = json.dumps(run_property_suite(cfg).to_json(), sort_keys=True)
    b = json.dumps(run_property_suite(cfg).to_json(), sort_keys=True)
    assert a == b


# -- experiments ------------------------------------------------------------

def test_tightness_experiment_shape():
    cfg = ExperimentConfig(classical(4), trials=200, perturbation_magnitudes=(0.01, 0.05, 0.1),
                           horizon=16, n_max=64)
    table = tightness_experiment(cfg)
    rows = list(csv.reader(io.StringIO(table.to_csv())))
    assert tuple(rows[0]) == TIGHTNESS_HEADER
    assert len(rows) == 601
    for mag in ("0.01", "0.05", "0.1"):
        entry = table.summary["per_magnitude"][mag]
        assert entry["rows"] == 200 and entry["unsound_rows"] == 0
    for key in ("ratio_eq6", "ratio_eq9", "ratio_eq12_inf", "ratio_per62"):
        col = table.column(key)
        assert np.nanmax(col) <= 1 + 1e-8


def test_tightness_experiment_is_deterministic(tmp_path):
    cfg = ExperimentConfig(pcone(2, 3.0), trials=4, perturbation_magnitudes=(0.05,), horizon=8,
                           n_max=64, output_path=str(tmp_path / "t.csv"))
    tightness_experiment(cfg)
    first = (tmp_path / "t.csv").read_bytes()
    summary = json.loads((tmp_path / "t.summary.json").read_text())
    assert summary["config"]["trials"] == 4
    threaded = ExperimentConfig(**{**cfg.__dict__, "threads": 4})
    tightness_experiment(threaded)
    assert (tmp_path / "t.csv").read_bytes() == first


def test_tightness_large_magnitude_records_verdicts():
    cfg = ExperimentConfig(classical(3), trials=10, perturbation_magnitudes=(1.5,), horizon=8,
                           n_max=64)
    table = tightness_experiment(cfg)
    for r in table.rows:
        if r["status"] != "ok":
            continue
        if r["transfer_verdict"] == "DoesNotApply":
            assert r["bound_per62"] is None and r["transfer_margin"] <= 0


def test_density_examples(swap):
    sp = classical(3)
    Te = mixture_with_fixed_point(identity(sp), element(sp, [1 / 3] * 3), 0.5)
    assert dobrushin_delta(Te).value == pytest.approx(0.75)
    assert classify(Te, n_check=8, traces=False).classification == UAS
    assert operator_norm(np.eye(3) - Te.matrix, sp) <= 0.5 + 1e-12
    Te = mixture_with_fixed_point(identity(sp), element(sp, [1 / 3] * 3), 1.999)
    assert dobrushin_delta(Te).value <= 0.0005 + 1e-12
    Ts = mixture_with_fixed_point(swap, element(classical(2), [0.5, 0.5]), 0.2)
    assert dobrushin_delta(Ts).value == pytest.approx(0.9)
    rep = classify(Ts, n_check=8, traces=False)
    assert rep.classification == UAS and rep.n0 == 1


@pytest.mark.parametrize("space", [classical(4), pcone(2, 2.0), quantum(2)], ids=space_label)
def test_density_experiment(space):
    trials = 2 if space.exact else 1
    cfg = ExperimentConfig(space, trials=trials, horizon=8, n_max=64)
    table = density_experiment(cfg, open_samples=10 if space.exact else 3)
    assert len(table.rows) == trials * 3 * 4
    s = table.summary
    assert s["delta_ok"] == s["norm_ok"] == s["uas"] == s["rows"]
    assert s["open_failures"] == 0
    header = table.to_csv().splitlines()[0].split(",")
    assert tuple(header) == DENSITY_HEADER


def test_density_rejects_bad_epsilon():
    with pytest.raises(PreconditionError):
        density_experiment(ExperimentConfig(classical(2), trials=1), epsilons=(2.0,))
