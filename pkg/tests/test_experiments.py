import json
import math

import numpy as np
import pytest

from conftest import rings
from filaments.currents import FilamentCurrent, TestFieldDictionary
from filaments.experiments import (
    RandomCurveLaw,
    StudyReport,
    chaos_study,
    contdep_study,
    loglog_slope,
    meanfield_study,
    perturbations,
    reference_family,
    run_rng,
    sample_family,
)
from filaments.geometry import arclength
from filaments.kernels import MollifiedBiotSavart, ZeroKernel
from filaments.solver import simulate_filaments

BS = MollifiedBiotSavart(0.5)
D3 = TestFieldDictionary.random(3, seed=0)
FIXED = RandomCurveLaw(center_lo=(0.1, 0.2, 0.0), center_hi=(0.1, 0.2, 0.0), radius=(1.0, 1.0))
UNIT = RandomCurveLaw(radius=(1.0, 1.0))


@pytest.mark.trivial
def test_degenerate_law_identical_curves():
    fam = sample_family(FIXED, 5, 16, seed=3)
    assert all(np.array_equal(fam.points[0], p) for p in fam.points)


@pytest.mark.trivial
def test_sampling_deterministic():
    law = RandomCurveLaw(tilt=0.5)
    a = sample_family(law, 7, 16, seed=11)
    b = sample_family(law, 7, 16, seed=11)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, sample_family(law, 7, 16, seed=12).points)
    assert np.array_equal(reference_family(law, 64, 16, 2).points, reference_family(law, 64, 16, 2).points)


@pytest.mark.parametrize("law", [RandomCurveLaw(tilt=1.0), RandomCurveLaw(kind="fourier", order=4)])
def test_arclength_below_cap(law):
    fam = sample_family(law, 1000, 64, seed=0)
    lengths = np.array([arclength(c) for c in fam.curves])
    assert lengths.max() <= law.arclength_cap


def test_law_validation_and_roundtrip():
    with pytest.raises(ValueError):
        RandomCurveLaw(kind="knot")
    with pytest.raises(ValueError):
        RandomCurveLaw(radius=(1.0, 0.5))
    with pytest.raises(ValueError):
        sample_family(UNIT, 0)
    law = RandomCurveLaw(tilt=0.3, radius=(0.7, 1.1))
    assert RandomCurveLaw.from_dict(json.loads(json.dumps(law.to_dict()))) == law


def test_run_streams_independent():
    a = run_rng(0, 1, 2).random(4)
    assert np.array_equal(a, run_rng(0, 1, 2).random(4))
    assert not np.array_equal(a, run_rng(0, 2, 1).random(4))


def test_loglog_slope_exact():
    N = np.array([8, 16, 32, 64])
    slope, rms = loglog_slope(N, 3.0 * N ** -0.5)
    assert slope == pytest.approx(-0.5, abs=1e-12) and rms < 1e-12


@pytest.mark.trivial
def test_meanfield_degenerate_law_collapses():
    rep = meanfield_study(FIXED, [2, 4], BS, 0.2, 0.05, D=D3, trials=2, N_ref=16)
    assert rep.metrics["e1"].max() <= 1e-8
    assert rep.metrics["e2"].max() <= 1e-8
    assert rep.summary["reference_error"] <= 1e-8


@pytest.mark.trivial
def test_meanfield_zero_kernel():
    rep = meanfield_study(UNIT, [2, 4], ZeroKernel(), 0.2, 0.05, D=D3, trials=3, N_ref=16)
    assert np.all(rep.metrics["e1"] == 0.0)
    # e2 is the frozen initial sampling distance, identical at every time
    fam = sample_family(UNIT, 2, 16, rng=run_rng(0, 0, 0))
    ref = reference_family(UNIT, 16, 16, 0)
    d0 = np.abs(D3.pair_values(FilamentCurrent(fam)) - D3.pair_values(FilamentCurrent(ref))).max()
    assert rep.metrics["e2"][0, 0] == d0


def test_meanfield_rejects_unsorted_ns():
    with pytest.raises(ValueError):
        meanfield_study(UNIT, [4, 2], BS, 0.1, 0.05)


@pytest.mark.trivial
def test_contdep_zero_perturbation_skipped():
    fam = rings([(0, 0, 0), (0.3, 0.0, 0.5)], [1.0, 0.7], M=16)
    rep = contdep_study(FilamentCurrent(fam), [fam], BS, 0.2, 0.05, D=D3)
    assert math.isnan(rep.metrics["ratio"][0, 0])
    assert rep.metrics["sup_distance"][0, 0] == 0.0
    assert rep.summary["skipped"] == 1


@pytest.mark.trivial
def test_contdep_zero_kernel_ratio_one():
    fam = rings([(0, 0, 0), (0.3, 0.0, 0.5)], [1.0, 0.7], M=16)
    scales = [1e-1, 1e-2]
    rep = contdep_study(FilamentCurrent(fam), perturbations(fam, scales), ZeroKernel(), 0.2, 0.05, D=D3,
                        scales=scales)
    assert np.all(rep.metrics["ratio"] == 1.0)


def test_contdep_translation_bounded():
    fam = rings([(0, 0, 0), (0.3, 0.0, 0.5), (-0.2, 0.3, -0.4)], [1.0, 0.7, 0.9], M=16)
    scales = [1e-1, 1e-2, 1e-3]
    rep = contdep_study(FilamentCurrent(fam), perturbations(fam, scales), BS, 0.3, 0.05, D=D3, scales=scales)
    assert rep.summary["spread"] <= 3.0
    deformed = perturbations(fam, scales, kind="deformation", seed=4)
    rep2 = contdep_study(FilamentCurrent(fam), deformed, BS, 0.3, 0.05, D=D3, scales=scales)
    assert np.isfinite(rep2.summary["max_ratio"])


@pytest.mark.trivial
def test_chaos_degenerate_law_zero_gap():
    rep = chaos_study(FIXED, [2, 4], BS, 0.2, 0.05, D=D3, trials=2, N_ref=16)
    assert np.all(np.abs(rep.summary["gap"]) <= 1e-8)


@pytest.mark.trivial
def test_chaos_order_one_is_mean_error():
    rep = chaos_study(UNIT, [2, 4], BS, 0.2, 0.05, D=D3, fields=(3,), trials=4, N_ref=16)
    ref = simulate_filaments(reference_family(UNIT, 16, 16, 0), BS, 0.2, 0.05)
    limit = D3.pair_values(ref.state(len(ref) - 1))[3]
    assert rep.summary["limit"] == limit
    assert np.array_equal(rep.metrics["estimate"], rep.metrics["empirical"])
    assert np.array_equal(rep.summary["gap"], np.abs(rep.mean("empirical") - limit))


def test_chaos_exchangeability_terms():
    rep = chaos_study(UNIT, [4], BS, 0.2, 0.05, D=D3, trials=1, N_ref=16)
    fam = sample_family(UNIT, 4, 16, rng=run_rng(0, 0, 0))
    path = simulate_filaments(fam, BS, 0.2, 0.05)
    G = D3.curve_values(path.state(len(path) - 1))[:, [0, 1]]
    ustat = (G[:, 0].sum() * G[:, 1].sum() - G[:, 0] @ G[:, 1]) / 12
    assert rep.metrics["estimate"][0, 0] == pytest.approx(ustat, rel=1e-12)
    assert rep.metrics["exch_direct"][0, 0] == pytest.approx(G[0, 0] * G[1, 1] - G[:, 0].mean() * G[:, 1].mean(),
                                                             rel=1e-12)
    assert rep.metrics["exch_bound"][0, 0] >= abs(rep.metrics["exch_stated"][0, 0]) - 1e-15
    with pytest.raises(ValueError):
        chaos_study(UNIT, [1, 2], BS, 0.2, 0.05)


def test_study_report_io(tmp_path):
    rep = StudyReport("demo", [8, 16], {"e": np.array([[1.0, 0.1], [0.5, 1 / 3]])},
                      summary={"flag": np.bool_(True), "x": np.float64(0.1)})
    rep.write_json(tmp_path / "r.json")
    rep.write_csv(tmp_path / "r.csv")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["metrics"]["e"][1][1] == 1 / 3 and d["summary"]["flag"] is True
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "N,trial,metric,value" and len(rows) == 5
    assert float(rows[-1].split(",")[-1]) == 1 / 3
    with pytest.raises(ValueError):
        StudyReport("bad", [1, 1])


def test_study_reproducible(tmp_path):
    a = meanfield_study(UNIT, [2, 4], BS, 0.1, 0.05, D=D3, trials=2, N_ref=16, seed=7)
    b = meanfield_study(UNIT, [2, 4], BS, 0.1, 0.05, D=D3, trials=2, N_ref=16, seed=7)
    a.write_json(tmp_path / "a.json")
    b.write_json(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
