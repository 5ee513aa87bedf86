import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from ifray.em import (C0, MACHINE_EQUIVALENT, PEC, Antenna, Material, Polarization, RadioConfig,
                      antenna_gain, complex_permittivity, fresnel_interface, fresnel_slab,
                      friis_gain, lambertian_scatter_gain, utd_diffraction)

TE, TM = Polarization.TE, Polarization.TM


# -- oracles -----------------------------------------------------------------------------

def transfer_matrix_slab(eps, theta, pol, f, d):
    """Characteristic-matrix slab (physics e^{-iwt} convention, so eps is conjugated)."""
    eps = complex(eps).conjugate()
    s2 = math.sin(theta) ** 2
    k0 = 2 * math.pi * f / C0
    kz = cmath.sqrt(eps - s2)
    if kz.imag < 0:
        kz = -kz
    q0 = math.cos(theta)
    q1 = kz if pol is TE else kz / eps
    delta = k0 * d * kz
    m11 = m22 = cmath.cos(delta)
    m12 = -1j * cmath.sin(delta) / q1
    m21 = -1j * q1 * cmath.sin(delta)
    den = q0 * m11 + q0 * q0 * m12 + m21 + q0 * m22
    r = (q0 * m11 + q0 * q0 * m12 - m21 - q0 * m22) / den
    t = 2 * q0 / den
    return r, t


def knife_edge_oracle(v):
    """Fresnel-Kirchhoff knife-edge field relative to free space."""
    # int_v^inf = 1/2 - int_0^v for both Fresnel integrands
    re, _ = quad(lambda t: math.cos(math.pi * t * t / 2), 0, v)
    im, _ = quad(lambda t: math.sin(math.pi * t * t / 2), 0, v)
    return (1 + 1j) / 2 * ((0.5 - re) - 1j * (0.5 - im))


def half_plane_field(delta, f=28e9, s=10.0, phi_inc=math.pi / 2):
    """UTD total field relative to free space behind a PEC half-plane (soft pol).

    The half-plane lies on the 0-face; the receiver sits at angle
    ``phi_inc + pi + delta`` from it, ``s`` metres from the edge.
    """
    k = 2 * math.pi * f / C0
    src = s * np.array([math.cos(phi_inc), math.sin(phi_inc)])
    phi = phi_inc + math.pi + delta
    rx = s * np.array([math.cos(phi), math.sin(phi)])
    r_direct = float(np.linalg.norm(rx - src))
    lit = phi <= phi_inc + math.pi
    d = utd_diffraction(2.0, s, s, phi_inc, phi, math.pi / 2, f, TE)
    diffracted = d * cmath.exp(-1j * k * (2 * s - r_direct)) * r_direct / s
    return (1.0 if lit else 0.0) + diffracted, src, rx


# -- permittivity & materials --------------------------------------------------------------

def test_machine_permittivity_at_both_bands():
    assert complex_permittivity(MACHINE_EQUIVALENT, 3.7e9) == 3 - 0.1j
    assert complex_permittivity(MACHINE_EQUIVALENT, 28e9) == 3 - 0.09j


def test_nearest_frequency_lookup_without_interpolation():
    m = Material("x", ((1e9, 2.0, 0.0), (10e9, 5.0, 1.0)))
    assert complex_permittivity(m, 4e9) == 2 - 0j
    assert complex_permittivity(m, 7e9) == 5 - 1j


def test_lossless_permittivity():
    m = Material("lossless", ((1e9, 3.0, 0.0),))
    for f in (1e8, 3.7e9, 1e11):
        assert complex_permittivity(m, f) == 3 - 0j


def test_pec_sentinel():
    assert complex_permittivity(Material("m", (), 0.01, is_pec=True), 1e9) is PEC


@pytest.mark.parametrize("kwargs", [
    dict(permittivity=((1e9, 0.5, 0.0),)),
    dict(permittivity=((1e9, 3.0, -0.1),)),
    dict(permittivity=((1e9, 3.0, 0.0),), thickness=0.0),
    dict(permittivity=((1e9, 3.0, 0.0),), scattering_s=1.5),
    dict(permittivity=()),
])
def test_material_invariants(kwargs):
    with pytest.raises(ValueError):
        Material("bad", **kwargs)


def test_radio_config_invariants():
    with pytest.raises(ValueError):
        RadioConfig(frequency=0)
    with pytest.raises(ValueError):
        RadioConfig(bandwidth=-1)
    with pytest.raises(ValueError):
        RadioConfig(noise_floor_dbm=10.0)


# -- Fresnel -------------------------------------------------------------------------------

def test_brewster_null():
    assert abs(fresnel_interface(3.0, math.radians(60), TM)) < 1e-12
    r, _ = fresnel_slab(3 - 0j, math.radians(60), TM, 3.7e9, 0.1)
    assert abs(r) < 1e-6


@pytest.mark.parametrize("pol", [TE, TM])
def test_normal_incidence_single_interface(pol):
    r = fresnel_interface(3 - 0j, 0.0, pol)
    assert abs(r) == pytest.approx(0.2679491924, abs=1e-9)
    assert 20 * math.log10(abs(r)) == pytest.approx(-11.44, abs=0.005)


@pytest.mark.parametrize("pol", [TE, TM])
def test_pec_slab(pol):
    for th in np.linspace(0, 1.5, 7):
        r, t = fresnel_slab(PEC, th, pol, 3.7e9, 0.01)
        assert abs(r) == 1.0 and t == 0
    assert fresnel_slab(PEC, 0.3, TE, 1e9, 0.1)[0] == -1
    assert fresnel_slab(PEC, 0.3, TM, 1e9, 0.1)[0] == 1


@pytest.mark.parametrize("theta", [-0.1, math.pi / 2, 2.0])
def test_slab_angle_domain(theta):
    with pytest.raises(ValueError):
        fresnel_slab(3 - 0j, theta, TE, 1e9, 0.1)


def test_slab_thickness_domain():
    with pytest.raises(ValueError):
        fresnel_slab(3 - 0j, 0.1, TE, 1e9, 0.0)


@pytest.mark.parametrize("pol", [TE, TM])
@pytest.mark.parametrize("eps", [3 - 0j, 5.24 - 0.4j, 3 - 0.1j, 20 - 15j])
@pytest.mark.parametrize("theta_deg", [0, 25, 60, 85])
def test_slab_matches_transfer_matrix(eps, theta_deg, pol):
    th = math.radians(theta_deg)
    r, t = fresnel_slab(eps, th, pol, 3.7e9, 0.07)
    r2, t2 = transfer_matrix_slab(eps, th, pol, 3.7e9, 0.07)
    assert abs(r) == pytest.approx(abs(r2), abs=1e-9)
    assert abs(t) == pytest.approx(abs(t2), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(er=st.floats(1.0, 30.0), ei=st.floats(0.0, 20.0), th=st.floats(0.0, 1.5707),
       d=st.floats(1e-3, 0.5), f=st.floats(1e8, 1e11), pol=st.sampled_from([TE, TM]))
def test_slab_passivity(er, ei, th, d, f, pol):
    r, t = fresnel_slab(complex(er, -ei), th, pol, f, d)
    p = abs(r) ** 2 + abs(t) ** 2
    assert p <= 1 + 1e-9
    if ei == 0.0:
        assert p == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("eps", [3 - 0j, 5.24 - 0.4j, 60 - 30j])
@pytest.mark.parametrize("pol", [TE, TM])
def test_grazing_limit(eps, pol):
    r, _ = fresnel_slab(eps, math.pi / 2 - 1e-7, pol, 3.7e9, 0.2)
    assert abs(r) > 0.999


@pytest.mark.parametrize("eps", [3 - 0j, 5.24 - 0.4j, 1.2 - 5j])
@pytest.mark.parametrize("pol", [TE, TM])
def test_reflection_continuous_in_angle(eps, pol):
    th = np.linspace(0, math.pi / 2 - 1e-4, 20001)
    r = fresnel_interface(eps, th, pol)
    assert np.max(np.abs(np.diff(r))) < 1e-2


# -- free space & antennas -------------------------------------------------------------------

def test_friis_anchors():
    assert 10 * math.log10(friis_gain(3.7e9, 6.1)) == pytest.approx(-59.52, abs=0.01)
    assert 10 * math.log10(friis_gain(28e9, 6.1)) == pytest.approx(-77.1, abs=0.05)


def test_friis_doubling_and_ratio():
    assert 10 * math.log10(friis_gain(1e9, 2.0) / friis_gain(1e9, 1.0)) == pytest.approx(
        -6.0206, abs=1e-4)
    assert friis_gain(1e9, 3.0) / friis_gain(1e9, 7.0) == pytest.approx((7 / 3) ** 2, rel=1e-14)


def test_friis_domain():
    with pytest.raises(ValueError):
        friis_gain(1e9, 0.0)


def test_antennas():
    iso = Antenna()
    dip = Antenna("dipole")
    for d in ([1, 0, 0], [0, 0, 1], [0.6, 0, 0.8]):
        assert antenna_gain(iso, np.array(d, float)) == 1.0
    assert antenna_gain(dip, np.array([1.0, 0, 0])) == pytest.approx(1.643)
    assert antenna_gain(dip, np.array([0.0, 0, 1.0])) == 0.0
    # near the axis G ~ 1.643 (pi theta / 4)^2
    near = antenna_gain(dip, np.array([math.sin(1e-4), 0, math.cos(1e-4)]))
    assert near == pytest.approx(1.643 * (math.pi * 1e-4 / 4) ** 2, rel=1e-6)
    with pytest.raises(ValueError):
        Antenna("horn")


# -- Lambertian --------------------------------------------------------------------------------

def test_lambertian_structure():
    base = lambertian_scatter_gain(0.3, 0.25, 0.2, 0.4, 3.0, 5.0, 3.7e9)
    assert lambertian_scatter_gain(0.0, 0.25, 0.2, 0.4, 3.0, 5.0, 3.7e9) == 0.0
    # cos(pi/2) is ~6e-17 in floating point
    assert lambertian_scatter_gain(0.3, 0.25, 0.2, math.pi / 2, 3.0, 5.0, 3.7e9) < base * 1e-15
    assert lambertian_scatter_gain(0.3, 0.5, 0.2, 0.4, 3.0, 5.0, 3.7e9) == pytest.approx(2 * base)
    assert lambertian_scatter_gain(0.3, 0.25, 0.2, 0.4, 6.0, 5.0, 3.7e9) == pytest.approx(base / 4)
    lam = C0 / 3.7e9
    expect = (lam / 4 / math.pi) ** 2 * 0.09 * 0.25 * math.cos(0.2) * math.cos(0.4) / (
        math.pi * 9 * 25)
    assert base == pytest.approx(expect, rel=1e-12)


@given(ti=st.floats(0, math.pi / 2), ts=st.floats(0, math.pi / 2),
       ri=st.floats(0.1, 100), rs=st.floats(0.1, 100), s=st.floats(0, 1))
def test_lambertian_reciprocity(ti, ts, ri, rs, s):
    a = lambertian_scatter_gain(s, 0.25, ti, ts, ri, rs, 3.7e9)
    b = lambertian_scatter_gain(s, 0.25, ts, ti, rs, ri, 3.7e9)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


# -- UTD ---------------------------------------------------------------------------------------

def test_knife_edge_shadow_boundary_value():
    total, _, _ = half_plane_field(0.0)
    assert 20 * math.log10(abs(total)) == pytest.approx(-6.02, abs=0.1)


def test_knife_edge_sweep_against_integral_oracle():
    f, s = 28e9, 10.0
    lam = C0 / f
    prev = None
    for delta in np.radians(np.linspace(-0.5, 0.5, 101)):
        total, src, rx = half_plane_field(delta, f, s)
        # signed clearance of the edge (origin) from the src->rx line
        u = (rx - src) / np.linalg.norm(rx - src)
        h = float(src[1] * u[0] - src[0] * u[1])  # > 0 when the edge obstructs
        d1 = float(-np.dot(src, u))
        d2 = float(np.dot(rx, u))
        v = h * math.sqrt(2 / lam * (1 / d1 + 1 / d2))
        oracle = knife_edge_oracle(v)
        db = 20 * math.log10(abs(total))
        assert db == pytest.approx(20 * math.log10(abs(oracle)), abs=0.15)
        if prev is not None:
            assert abs(db - prev) < 0.5
        prev = db


def _oblique_half_plane(phi, f=28e9, s=10.0, phi_inc=math.pi / 3):
    k = 2 * math.pi * f / C0
    src = s * np.array([math.cos(phi_inc), math.sin(phi_inc)])
    image = np.array([src[0], -src[1]])  # mirror in the 0-face (y = 0)
    rx = s * np.array([math.cos(phi), math.sin(phi)])
    r_direct = float(np.linalg.norm(rx - src))
    r_image = float(np.linalg.norm(rx - image))
    total = 1.0 + 0j
    if phi <= math.pi - phi_inc:
        total += -1.0 * r_direct / r_image * cmath.exp(-1j * k * (r_image - r_direct))
    d = utd_diffraction(2.0, s, s, phi_inc, phi, math.pi / 2, f, TE)
    return total + d * cmath.exp(-1j * k * (2 * s - r_direct)) * r_direct / s


def test_reflection_boundary_continuity():
    rb = math.pi - math.pi / 3
    below = _oblique_half_plane(rb - 1e-9)
    above = _oblique_half_plane(rb + 1e-9)
    assert abs(20 * math.log10(abs(below) / abs(above))) < 0.01
    # direct/reflected fringes are ~0.02 deg wide here, so sample densely
    db = [20 * math.log10(abs(_oblique_half_plane(p)))
          for p in rb + np.radians(np.linspace(-0.5, 0.5, 4001))]
    assert np.max(np.abs(np.diff(db))) < 0.5


def test_shadow_boundary_exact_continuity():
    below, _, _ = half_plane_field(-1e-9)
    above, _, _ = half_plane_field(1e-9)
    assert abs(20 * math.log10(abs(below) / abs(above))) < 0.01


def test_deep_lit_diffraction_is_weak():
    for delta in np.radians([-60, -90, -120]):
        total, src, rx = half_plane_field(delta)
        diff = abs(total - 1.0)
        assert 20 * math.log10(diff) <= -20.0


def test_lossy_faces_reduce_to_pec_for_large_loss():
    args = (1.5, 5.0, 7.0, 0.7, 3.9, 1.2, 3.7e9, TE)
    pec = utd_diffraction(*args)
    lossy = utd_diffraction(*args, face0=(3 - 0.1j, 0.4), facen=(3 - 0.1j, 0.4))
    assert abs(lossy) < abs(pec) * 1.5
    assert lossy != pec


@pytest.mark.parametrize("bad", [
    dict(beta0=0.0), dict(beta0=math.pi), dict(s_i=0.0), dict(s_d=-1.0), dict(phi_dif=4.8),
])
def test_utd_domain_errors(bad):
    args = dict(n=1.5, s_i=5.0, s_d=5.0, phi_inc=0.5, phi_dif=2.0, beta0=1.0, f=3.7e9, pol=TE)
    args.update(bad)
    with pytest.raises(ValueError):
        utd_diffraction(**args)


def test_utd_reciprocity_of_coefficient():
    a = utd_diffraction(1.5, 4.0, 9.0, 0.6, 3.1, 1.1, 3.7e9, TM, (5 - 0.3j, 0.25), (3 - 0.1j, 0.4))
    b = utd_diffraction(1.5, 9.0, 4.0, 3.1, 0.6, math.pi - 1.1, 3.7e9, TM, (5 - 0.3j, 0.25),
                        (3 - 0.1j, 0.4))
    # swapping ends rescales only the spreading factor sqrt(s_i / s_d)
    assert abs(a) / math.sqrt(4.0 / 9.0) == pytest.approx(abs(b) / math.sqrt(9.0 / 4.0), rel=1e-9)
