import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifray.channel import (aoa_spectrum, cdf_quantile, compute_pdp, coverage_map, empirical_cdf,
                           grid_axis, large_scale_params, rms_delay_spread, run_p2mp, worker_count,
                           write_coverage_csv, write_pdp_csv, write_pgm)
from ifray.em import RadioConfig, friis_gain
from ifray.geometry import PAPER_BS, Hall, OrientedBox, Scene
from ifray.tracer import InteractionBudget, MPCClass, MultipathComponent

NONE = InteractionBudget(0, 0, 0)


def mpc(delay_ns, power_dbm, az_deg=0.0, cls=MPCClass.SMPC, sig="R0"):
    return MultipathComponent(delay_ns * 1e-9, power_dbm, 0j, (0.0, 0.0),
                              (math.radians(az_deg), 0.0), cls, sig)


def lin(db):
    return 10 ** (db / 10)


# -- PDP -------------------------------------------------------------------------------------------

def test_pdp_single_component():
    pdp = compute_pdp([mpc(20.35, -59.5)], RadioConfig(bandwidth=80e6))
    assert pdp.bin_width == pytest.approx(12.5e-9)
    assert len(pdp.bins) == 1
    centre, power = pdp.bins[0]
    assert 12.5e-9 <= centre < 25e-9
    assert power == pytest.approx(-59.5)


def test_pdp_drops_sub_noise_and_empty():
    assert compute_pdp([mpc(10, -150)]).bins == ()
    assert compute_pdp([]).bins == ()


def test_pdp_bin_width_follows_bandwidth():
    assert compute_pdp([], RadioConfig(bandwidth=100e6)).bin_width == pytest.approx(10e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 2000), st.floats(-140, -30)), min_size=1, max_size=40))
def test_pdp_conserves_power(items):
    mpcs = [mpc(d, p) for d, p in items]
    pdp = compute_pdp(mpcs)
    delays = [b[0] for b in pdp.bins]
    assert delays == sorted(delays)
    assert all(b[1] >= pdp.noise_floor for b in pdp.bins)
    total_bins = sum(lin(b[1]) for b in pdp.bins)
    total_mpcs = sum(lin(p) for _, p in items)
    assert total_bins == pytest.approx(total_mpcs, rel=1e-9)


# -- delay spread -------------------------------------------------------------------------------------

def test_ds_single_path():
    assert rms_delay_spread([mpc(42, -70)]) == 0.0


def test_ds_two_equal_paths():
    assert rms_delay_spread([mpc(0, -70), mpc(100, -70)]) * 1e9 == pytest.approx(50.0, abs=1e-9)


def test_ds_three_path_fixture():
    mpcs = [mpc(0, 10 * math.log10(1.0)), mpc(50, 10 * math.log10(0.5)),
            mpc(100, 10 * math.log10(0.25))]
    # hand evaluation of the moment formula: sqrt(3750/1.75 - (50/1.75)^2)
    assert rms_delay_spread(mpcs) * 1e9 == pytest.approx(36.4216, abs=1e-4)


def test_ds_threshold_and_errors():
    mpcs = [mpc(0, -60), mpc(100, -90)]
    assert rms_delay_spread(mpcs, rel_threshold_db=20) == 0.0
    assert rms_delay_spread(mpcs) > 0
    with pytest.raises(ValueError):
        rms_delay_spread([])
    with pytest.raises(ValueError):
        rms_delay_spread([mpc(0, -150)])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1000), st.floats(-120, -40)), min_size=1, max_size=20),
       st.floats(-20, 20), st.floats(0, 500))
def test_ds_scale_and_shift_invariance(items, gain_db, shift_ns):
    base = rms_delay_spread([mpc(d, p) for d, p in items])
    scaled = rms_delay_spread([mpc(d, p + gain_db) for d, p in items])
    shifted = rms_delay_spread([mpc(d + shift_ns, p) for d, p in items])
    assert base >= 0
    assert scaled == pytest.approx(base, rel=1e-6, abs=1e-15)
    assert shifted == pytest.approx(base, rel=1e-6, abs=1e-15)


# -- AoA ------------------------------------------------------------------------------------------------

def test_aoa_single():
    spec = aoa_spectrum([mpc(10, -60, az_deg=30.0)], 5)
    assert len(spec) == 72
    filled = [(a, p) for a, p in spec if math.isfinite(p)]
    assert filled == [(30.0, pytest.approx(-60.0))]


def test_aoa_two_equal():
    spec = dict(aoa_spectrum([mpc(10, -60, az_deg=10.0), mpc(20, -60, az_deg=190.0)], 5))
    assert spec[10.0] == pytest.approx(spec[190.0])
    assert sum(math.isfinite(p) for p in spec.values()) == 2


def test_aoa_negative_azimuth_wraps():
    spec = dict(aoa_spectrum([mpc(10, -60, az_deg=-90.0)], 5))
    assert math.isfinite(spec[270.0])


def test_aoa_empty_and_bad_bins():
    assert all(p == -math.inf for _, p in aoa_spectrum([], 5))
    with pytest.raises(ValueError):
        aoa_spectrum([], 7)


# -- CDF ---------------------------------------------------------------------------------------------------

def test_cdf_examples():
    cdf = empirical_cdf([30e-9, 10e-9, 20e-9])
    assert [c[0] for c in cdf] == [10e-9, 20e-9, 30e-9]
    assert [c[1] for c in cdf] == pytest.approx([1 / 3, 2 / 3, 1.0])
    assert cdf_quantile(cdf, 0.5) == pytest.approx(15e-9)  # linear between the steps
    first_crossing = next(v for v, p in cdf if p >= 0.5)
    assert first_crossing == 20e-9
    assert empirical_cdf([7.0, 7.0, 7.0]) == [(7.0, 1.0)]
    assert empirical_cdf([5.0]) == [(5.0, 1.0)]
    with pytest.raises(ValueError):
        empirical_cdf([])


@given(st.lists(st.floats(0, 1e-6), min_size=1, max_size=50))
def test_cdf_monotone(values):
    cdf = empirical_cdf(values)
    probs = [p for _, p in cdf]
    vals = [v for v, _ in cdf]
    assert probs == sorted(probs) and probs[-1] == 1.0
    assert vals == sorted(vals)


def test_large_scale_params_invariants():
    mpcs = [mpc(10, -60), mpc(30, -70), mpc(50, -150)]
    lsp = large_scale_params(mpcs)
    assert lsp.total_power_dbm >= max(m.power_dbm for m in mpcs if m.power_dbm >= -145)
    assert lsp.rms_ds >= 0
    assert lsp.total_power_dbm == pytest.approx(10 * math.log10(lin(-60) + lin(-70)))


# -- coverage ------------------------------------------------------------------------------------------------

def test_grid_axis():
    assert len(grid_axis(74.4, 2.0)) == 37
    assert len(grid_axis(24.4, 2.0)) == 12
    np.testing.assert_allclose(grid_axis(10.0, 2.0), [1, 3, 5, 7, 9])
    with pytest.raises(ValueError):
        grid_axis(10.0, 0.0)


def test_coverage_empty_room_matches_friis(empty_room):
    bs = (5.0, 4.0, 2.0)
    radio = RadioConfig()
    cov = coverage_map(empty_room, bs, radio, NONE, 2.0, n_rays=2000, workers=1)
    assert cov.shape == (5, 4)
    dist, power = [], []
    for x, y, p in cov.cells():
        d = math.dist((x, y, 1.44), bs)
        assert p == pytest.approx(10 * math.log10(friis_gain(radio.frequency, d)), abs=0.01)
        dist.append(d)
        power.append(p)
    order = np.argsort(dist, kind="stable")
    assert np.all(np.diff(np.array(power)[order]) <= 1e-12)


def test_coverage_behind_pec_wall():
    wall = OrientedBox((5.0, 4.0, 1.5), (0.1, 4.0, 1.5), 0.0, "metal", "partition")
    scene = Scene(Hall(10.0, 8.0, 3.0), (wall,))
    cov = coverage_map(scene, (2.0, 4.0, 1.5), RadioConfig(), NONE, 2.0, n_rays=2000, workers=1)
    xs = list(cov.xs)
    assert cov.blocked[xs.index(5.0)].all()
    for x in (7.0, 9.0):
        assert np.isnan(cov.power_dbm[xs.index(x)]).all()
    assert np.isfinite(cov.power_dbm[xs.index(1.0)]).all()


def test_coverage_writers(tmp_path, empty_room):
    cov = coverage_map(empty_room, (5.0, 4.0, 2.0), RadioConfig(), NONE, 2.0, n_rays=2000, workers=1)
    write_coverage_csv(tmp_path / "c.csv", cov)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x_m,y_m,power_dbm" and len(lines) == 21
    write_pgm(tmp_path / "c.pgm", cov)
    raw = (tmp_path / "c.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 5\n255\n") or raw.startswith(b"P5\n5 4\n255\n")
    assert len(raw) == len(b"P5\n5 4\n255\n") + 20
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", cov, -40, -120)


def test_pdp_writer(tmp_path):
    write_pdp_csv(tmp_path / "p.csv", compute_pdp([mpc(20.35, -59.5)]))
    assert (tmp_path / "p.csv").read_text() == "delay_ns,power_dbm\n18.750000,-59.500000\n"


# -- P2MP -------------------------------------------------------------------------------------------------------

def test_p2mp_empty_list(empty_room):
    assert run_p2mp(empty_room, (5, 4, 2), []) == []


def test_p2mp_mirrored_symmetry(empty_room):
    res = run_p2mp(empty_room, (5.0, 4.0, 1.5), [(2.0, 3.0, 1.2), (8.0, 3.0, 1.2)],
                   budget=InteractionBudget(2, 0, 0), n_rays=50_000, workers=1)
    a, b = (r.params for r in res)
    assert a.rms_ds == pytest.approx(b.rms_ds, rel=1e-9)
    assert a.total_power_dbm == pytest.approx(b.total_power_dbm, abs=1e-9)


def test_p2mp_isolates_failures(box_room):
    uts = [(2.0, 2.0, 1.0), (5.0, 4.0, 1.0), (8.0, 6.0, 1.0)]  # the middle one is inside the box
    res = run_p2mp(box_room, (1.0, 1.0, 1.5), uts, budget=InteractionBudget(1, 0, 0), n_rays=5000,
                   workers=2)
    assert [r.index for r in res] == [0, 1, 2]
    assert res[0].ok and res[2].ok
    assert not res[1].ok and "ValueError" in res[1].error


def test_p2mp_worker_determinism(box_room):
    uts = [(1.5 + i, 1.0 + 0.7 * i, 1.2) for i in range(6)]
    uts = [u for u in uts if not box_room.inside_object(u)]
    budget = InteractionBudget(2, 1, 1, True)
    runs = [run_p2mp(box_room, (9.0, 7.0, 2.0), uts, budget=budget, n_rays=20_000, workers=w)
            for w in (1, 3)]
    recs = [[[m.to_record() for m in r.mpcs] for r in run] for run in runs]
    assert recs[0] == recs[1]


def test_p2mp_paper_records(paper_scene, paper_pos):
    res = run_p2mp(paper_scene, PAPER_BS, paper_pos, budget=NONE, n_rays=1000, workers=1)
    assert len(res) == 75
    assert [r.los_class for r in res] == ["LoS"] * 38 + ["NLoS"] * 37
    assert all(r.ok for r in res)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("IFRAY_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2
    monkeypatch.delenv("IFRAY_THREADS")
    assert worker_count() >= 1


def test_diffuse_never_decreases_total_power(box_room):
    uts = [(2.0, 6.0, 1.2), (8.0, 2.0, 1.5), (8.5, 4.0, 1.0)]
    spec = run_p2mp(box_room, (1.5, 1.5, 2.0), uts, budget=InteractionBudget(2, 1, 1),
                    n_rays=20_000, workers=1)
    diff = run_p2mp(box_room, (1.5, 1.5, 2.0), uts, budget=InteractionBudget(2, 1, 1, True),
                    n_rays=20_000, workers=1)
    for a, b in zip(spec, diff):
        assert b.params.total_power_dbm >= a.params.total_power_dbm
        assert len(b.mpcs) > len(a.mpcs)
