import dataclasses
import json
import math
import random
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ifray.calibrate import (CalibrationConfig, EmptyObjectiveError, MeasurementReference,
                             apply_offsets, fit_offsets, objective, recharacterize,
                             reference_from_results, swap_materials)
from ifray.channel import LargeScaleParams, UTResult, empirical_cdf, run_p2mp
from ifray.em import complex_permittivity
from ifray.geometry import Hall, OrientedBox, Scene
from ifray.tracer import InteractionBudget, MPCClass, MultipathComponent

PAPER = CalibrationConfig.paper()


def mpc(power, cls=MPCClass.SMPC, sig="R2", delay_ns=30.0):
    return MultipathComponent(delay_ns * 1e-9, power, 1e-3 + 0j, (0.1, 0.2), (0.3, -0.1), cls, sig)


# -- offsets -------------------------------------------------------------------------------------------

def test_offset_examples():
    d, s, los = apply_offsets([mpc(-70.0, sig="R2-D14"), mpc(-100.0, MPCClass.DMPC, "S3.1.2"),
                               mpc(-60.0, MPCClass.LOS, "LoS")], PAPER)
    assert d.power_dbm == -80.0
    assert s.power_dbm == -88.0
    assert los.power_dbm == -60.0


def test_disabled_config_is_identity():
    items = [mpc(-70.0, sig="D3"), mpc(-90.0, MPCClass.DMPC, "S2.0.0")]
    assert apply_offsets(items, CalibrationConfig(-10, 12, enabled=False)) == items


kinds = st.sampled_from([(MPCClass.LOS, "LoS"), (MPCClass.SMPC, "R1-R3"), (MPCClass.SMPC, "D7"),
                         (MPCClass.SMPC, "R1-D7-T9:10"), (MPCClass.DMPC, "S4.2.0")])


@given(st.lists(st.tuples(kinds, st.floats(-160, -20)), max_size=30),
       st.floats(-30, 0), st.floats(0, 30))
def test_offset_invariants(items, d_off, s_off):
    mpcs = [mpc(p, c, s) for (c, s), p in items]
    out = apply_offsets(mpcs, CalibrationConfig(d_off, s_off))
    assert len(out) == len(mpcs)
    for a, b in zip(mpcs, out):
        assert (a.delay, a.aod, a.aoa, a.signature, a.mpc_class) == \
            (b.delay, b.aod, b.aoa, b.signature, b.mpc_class)
        expect = s_off if a.mpc_class is MPCClass.DMPC else d_off if a.has_diffraction else 0.0
        assert b.power_dbm - a.power_dbm == pytest.approx(expect, abs=1e-9)
        assert abs(b.amplitude) == pytest.approx(abs(a.amplitude) * 10 ** (expect / 20), rel=1e-12)


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        CalibrationConfig(math.inf, 0)
    with pytest.raises(ValueError):
        CalibrationConfig(0, 0, (("machine", "metal"),))
    again = CalibrationConfig.from_json(PAPER.to_json())
    assert again == PAPER
    with pytest.raises(ValueError):
        CalibrationConfig.from_dict({"diffraction_offset": 1})


# -- material swap -----------------------------------------------------------------------------------------

def test_paper_machines_preset(paper_scene):
    swapped = swap_materials(paper_scene, PAPER)
    assert len(swapped.facets) == len(paper_scene.facets)
    n_machine = 0
    for f in swapped.facets:
        if f.label == "machine":
            n_machine += 1
            mat = swapped.material_of(f.id)
            assert complex_permittivity(mat, 3.7e9) == 3 - 0.1j
            assert complex_permittivity(mat, 28e9) == 3 - 0.09j
            assert mat.thickness == 0.40
            assert mat.scattering_s == paper_scene.materials["metal"].scattering_s
    assert n_machine == 12 * 6
    for a, b in zip(paper_scene.objects, swapped.objects):
        if a.label != "machine":
            assert a == b


def test_empty_override_list(paper_scene):
    assert swap_materials(paper_scene, CalibrationConfig()) is paper_scene


def test_unmatched_pattern_warns(paper_scene):
    cfg = dataclasses.replace(PAPER, material_overrides=(("robot*", PAPER.material_overrides[0][1]),))
    with pytest.warns(UserWarning, match="matched no object"):
        out = swap_materials(paper_scene, cfg)
    assert out.objects == paper_scene.objects


# -- references & objective -------------------------------------------------------------------------------

def fake_results(ds_ns, cls="LoS"):
    return [UTResult(i, (0, 0, 0), cls, [], LargeScaleParams(-60.0, d * 1e-9, (), cls))
            for i, d in enumerate(ds_ns)]


def test_reference_json_round_trip(tmp_path):
    ref = MeasurementReference({"los": [(10e-9, 0.5), (20e-9, 1.0)]}, [(0.0, -60.0), (12.5e-9, -70)],
                               -60.0)
    again = MeasurementReference.from_json(ref.to_json())
    for (v1, p1), (v2, p2) in zip(again.ds_cdf["los"], ref.ds_cdf["los"]):
        assert v1 == pytest.approx(v2, rel=1e-12) and p1 == p2
    assert json.loads(ref.to_json())["ds_cdf"]["los"][0][0] == pytest.approx(10.0)
    with pytest.raises(ValueError):
        MeasurementReference({"los": [(20e-9, 0.5), (10e-9, 1.0)]})
    with pytest.raises(ValueError):
        MeasurementReference({"los": [(10e-9, 0.8), (20e-9, 0.5)]})
    with pytest.raises(ValueError):
        MeasurementReference({}, [(-1e-9, -60.0)])
    assert MeasurementReference({}).empty


def test_objective_zero_on_self():
    sim = fake_results([12, 30, 18, 25, 40]) + fake_results([50, 70, 65], "NLoS")
    assert objective(sim, reference_from_results(sim)) == 0.0


def test_objective_constant_shift():
    sim = fake_results([12, 30, 18, 25, 40, 33, 21])
    cdf = empirical_cdf([r.params.rms_ds + 10e-9 for r in sim])
    assert objective(sim, MeasurementReference({"los": cdf})) == pytest.approx(10.0, abs=1e-9)


def test_objective_reordering_invariant():
    sim = fake_results([12, 30, 18, 25, 40]) + fake_results([50, 70, 65], "NLoS")
    ref = MeasurementReference({"los": [(15e-9, 0.3), (35e-9, 1.0)], "nlos": [(60e-9, 1.0)]})
    shuffled = list(sim)
    random.Random(3).shuffle(shuffled)
    assert objective(shuffled, ref) == objective(sim, ref)


def test_objective_errors():
    with pytest.raises(ValueError):
        objective([], MeasurementReference({"los": [(1e-9, 1.0)]}))
    with pytest.raises(EmptyObjectiveError):
        objective(fake_results([10]), MeasurementReference({}))


# -- fitting ---------------------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def raw_box_results():
    boxes = (OrientedBox((5.0, 4.0, 1.0), (1.5, 0.6, 1.0), 0.0, "metal", "machine"),
             OrientedBox((7.5, 2.0, 1.0), (0.6, 0.6, 1.0), 0.4, "metal", "machine"))
    scene = Scene(Hall(12.0, 8.0, 3.0), boxes)
    uts = [(x, y, 1.4) for x in (2.0, 4.5, 7.0, 10.0) for y in (1.2, 3.0, 5.5, 7.0)]
    uts = [u for u in uts if not scene.inside_object(u)]
    budget = InteractionBudget(2, 1, 0, True, ("walls", "machines"))
    return scene, uts, budget, run_p2mp(scene, (1.0, 7.0, 2.2), uts, budget=budget, n_rays=20_000,
                                        workers=1)


def _fit(raw_box_results, truth, **kw):
    scene, uts, budget, raw = raw_box_results
    ref = reference_from_results(recharacterize(raw, CalibrationConfig(*truth)))
    return fit_offsets(scene, (1.0, 7.0, 2.2), uts, budget=budget, ref=ref, raw_results=raw, **kw)


def test_fit_identity(raw_box_results):
    fit = _fit(raw_box_results, (0.0, 0.0))
    assert (fit.config.diffraction_offset_db, fit.config.diffuse_offset_db) == (0.0, 0.0)
    assert fit.score == 0.0


def test_fit_round_trip(raw_box_results):
    fit = _fit(raw_box_results, (-10.0, 12.0))
    assert abs(fit.config.diffraction_offset_db + 10) <= 1
    assert abs(fit.config.diffuse_offset_db - 12) <= 1
    assert fit.evaluations <= 200
    scores = [s for _, _, s in fit.path]
    assert all(b < a for a, b in zip(scores, scores[1:]))


def test_fit_grid_membership(raw_box_results):
    fit = _fit(raw_box_results, (-4.3, 7.6))
    d, s = fit.config.diffraction_offset_db, fit.config.diffuse_offset_db
    assert d == int(d) and s == int(s)
    assert -20 <= d <= 0 and 0 <= s <= 20


def test_fit_evaluation_cap(raw_box_results):
    fit = _fit(raw_box_results, (-10.0, 12.0), max_evals=7)
    assert fit.evaluations <= 7
    assert len(fit.log) == fit.evaluations


def test_fit_rejects_bad_search(raw_box_results):
    with pytest.raises(ValueError):
        _fit(raw_box_results, (0.0, 0.0), step=0)
    with pytest.raises(ValueError):
        _fit(raw_box_results, (0.0, 0.0), diffraction_range=(0, -20))
    scene, uts, budget, raw = raw_box_results
    with pytest.raises(EmptyObjectiveError):
        fit_offsets(scene, (1.0, 7.0, 2.2), uts, ref=MeasurementReference({}), raw_results=raw)


def test_recharacterize_skips_failed(raw_box_results):
    raw = list(raw_box_results[3])
    raw.append(UTResult(99, (0, 0, 0), "LoS", error="ValueError: boom"))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = recharacterize(raw, CalibrationConfig())
    assert len(out) == len(raw) - 1
