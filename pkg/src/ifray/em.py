"""Electromagnetic interaction coefficients.

Free-space spreading, Fresnel slab reflection/transmission, UTD wedge
diffraction, Lambertian effective-roughness scattering and antenna gains.
All functions are pure and accept numpy arrays where noted.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import fresnel as _fresnel_integrals

C0 = 299_792_458.0


class Polarization(str, enum.Enum):
    """Polarization branch relative to the local plane of incidence."""

    TE = "TE"  # perpendicular (soft for wedges)
    TM = "TM"  # parallel (hard for wedges)


class _PEC:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "PEC"


PEC = _PEC()
"""Sentinel permittivity of a perfect electric conductor."""


@dataclass(frozen=True)
class Material:
    """Slab material with tabulated complex permittivity.

    ``permittivity`` holds ``(freq_hz, eps_real, eps_imag)`` triples and the
    relative permittivity is ``eps_real - 1j * eps_imag``.
    """

    name: str
    permittivity: tuple = ()
    thickness: float = 0.2
    scattering_s: float = 0.0
    is_pec: bool = False

    def __post_init__(self):
        object.__setattr__(self, "permittivity",
                           tuple(tuple(float(x) for x in e) for e in self.permittivity))
        if not self.thickness > 0:
            raise ValueError(f"material {self.name!r}: thickness must be positive")
        if not 0.0 <= self.scattering_s <= 1.0:
            raise ValueError(f"material {self.name!r}: scattering_s must lie in [0, 1]")
        if not self.is_pec and not self.permittivity:
            raise ValueError(f"material {self.name!r}: needs a permittivity entry")
        for f, er, ei in self.permittivity:
            if f <= 0 or er < 1.0 or ei < 0.0:
                raise ValueError(f"material {self.name!r}: unphysical permittivity entry")

    def to_dict(self):
        out = {
            "permittivity": [
                {"freq_hz": f, "eps_real": er, "eps_imag": ei} for f, er, ei in self.permittivity
            ],
            "thickness_m": self.thickness,
            "scattering_s": self.scattering_s,
        }
        if self.is_pec:
            out["is_pec"] = True
        return out


def _itu(name, a, b, c, d, thickness, s, freqs=(3.7e9, 28e9)):
    # ITU-R P.2040 style fit: eps' = a f^b, sigma = c f^d (f in GHz)
    entries = []
    for f in freqs:
        g = f / 1e9
        sigma = c * g**d
        entries.append((f, a * g**b, 17.98 * sigma / g))
    return Material(name, tuple(entries), thickness, s)


BUILTIN_MATERIALS = {
    "concrete": _itu("concrete", 5.24, 0.0, 0.0462, 0.7822, 0.25, 0.3),
    "wood": _itu("wood", 1.99, 0.0, 0.0047, 1.0718, 0.03, 0.0),
    "glass": _itu("glass", 6.31, 0.0, 0.0036, 1.3394, 0.01, 0.0),
    "metal": Material("metal", (), 0.002, 0.3, is_pec=True),
}

# Equivalent machine block used by the calibrated model.
MACHINE_EQUIVALENT = Material(
    "machine-equivalent", ((3.7e9, 3.0, 0.1), (28e9, 3.0, 0.09)), 0.40, 0.3
)


@dataclass(frozen=True)
class Antenna:
    """Antenna pattern: ``"isotropic"`` (0 dBi) or ``"dipole"`` (vertical half-wave)."""

    kind: str = "isotropic"

    def __post_init__(self):
        if self.kind not in ("isotropic", "dipole"):
            raise ValueError(f"unknown antenna model {self.kind!r}")


@dataclass(frozen=True)
class RadioConfig:
    frequency: float = 3.7e9
    bandwidth: float = 80e6
    tx_power_dbm: float = 0.0
    noise_floor_dbm: float = -145.0
    tx_antenna: Antenna = field(default_factory=Antenna)
    rx_antenna: Antenna = field(default_factory=Antenna)

    def __post_init__(self):
        if not self.frequency > 0 or not self.bandwidth > 0:
            raise ValueError("frequency and bandwidth must be positive")
        if not self.noise_floor_dbm < self.tx_power_dbm:
            raise ValueError("noise floor must lie below the transmit power")

    @property
    def wavelength(self):
        return C0 / self.frequency


def complex_permittivity(material, f):
    """Relative permittivity ``eps' - j eps''`` at the tabulated frequency nearest ``f``.

    Returns :data:`PEC` for perfect conductors.
    """
    if material.is_pec:
        return PEC
    entry = min(material.permittivity, key=lambda e: (abs(e[0] - f), e[0]))
    return complex(entry[1], -entry[2])


def _branch_sqrt(z):
    # principal root; for eps'' >= 0 this keeps Im <= 0 so exp(-j q) decays
    root = np.sqrt(np.asarray(z, dtype=complex))
    return np.where(root.imag > 0, -root, root)


def fresnel_interface(eps, theta_i, pol):
    """Single-interface (air to ``eps``) Fresnel reflection coefficient."""
    theta_i = np.asarray(theta_i, dtype=float)
    pol = Polarization(pol)
    if eps is PEC:
        val = -1.0 if pol is Polarization.TE else 1.0
        return np.full(theta_i.shape, complex(val))[()]
    cos_i = np.cos(theta_i)
    root = _branch_sqrt(eps - np.sin(theta_i) ** 2)
    if pol is Polarization.TE:
        r = (cos_i - root) / (cos_i + root)
    else:
        r = (eps * cos_i - root) / (eps * cos_i + root)
    return r[()] if np.ndim(r) == 0 else r


def fresnel_slab(eps, theta_i, pol, f, thickness):
    """Reflection and transmission coefficients ``(R, T)`` of a homogeneous slab.

    Coherent two-interface model: the internal wave picks up the phase and
    attenuation ``q = k0 d sqrt(eps - sin^2 theta)`` per pass.

    Parameters
    ----------
    eps : complex or PEC
        Relative permittivity ``eps' - j eps''``.
    theta_i : float or ndarray
        Incidence angle from the surface normal, in ``[0, pi/2)``.
    pol : Polarization
    f : float
        Frequency in Hz.
    thickness : float
        Slab thickness in m.
    """
    theta_arr = np.asarray(theta_i, dtype=float)
    if np.any(theta_arr < 0) or np.any(theta_arr >= math.pi / 2):
        raise ValueError("incidence angle must lie in [0, pi/2)")
    if not thickness > 0:
        raise ValueError("slab thickness must be positive")
    if eps is PEC:
        r = fresnel_interface(PEC, theta_arr, pol)
        return r, np.zeros_like(np.asarray(r))[()]
    r = np.asarray(fresnel_interface(eps, theta_arr, pol))
    q = 2 * math.pi * f / C0 * thickness * _branch_sqrt(eps - np.sin(theta_arr) ** 2)
    e1 = np.exp(-1j * q)
    e2 = e1 * e1
    den = 1 - r * r * e2
    big_r = r * (1 - e2) / den
    big_t = (1 - r * r) * e1 / den
    return big_r[()], big_t[()]


def friis_gain(f, d):
    """Free-space power gain ``(lambda / (4 pi d))^2`` between unit-gain antennas."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    g = (C0 / f / (4 * math.pi * d)) ** 2
    return g[()]


def antenna_gain(antenna, direction):
    """Linear gain of ``antenna`` toward ``direction`` (unit vector, z up)."""
    if antenna.kind == "isotropic":
        return 1.0
    cos_t = float(np.clip(direction[2], -1.0, 1.0))
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    if sin_t < 1e-12:
        return 0.0
    return 1.643 * (math.cos(math.pi / 2 * cos_t) / sin_t) ** 2


def lambertian_scatter_gain(s, area, theta_i, theta_s, r_i, r_s, f):
    """Power gain of a Lambertian effective-roughness tile.

    ``g = (lambda / 4 pi)^2 S^2 dA cos(theta_i) cos(theta_s) / (pi r_i^2 r_s^2)``
    """
    lam = C0 / f
    cos_i = np.clip(np.cos(theta_i), 0.0, None)
    cos_s = np.clip(np.cos(theta_s), 0.0, None)
    g = (lam / (4 * math.pi)) ** 2 * s * s * area * cos_i * cos_s / (
        math.pi * np.square(r_i) * np.square(r_s))
    return np.asarray(g)[()]


# -- UTD ----------------------------------------------------------------------

def transition_function(x):
    """Kouyoumjian-Pathak transition function ``F(x)`` for ``x >= 0``.

    ``F(x) = 2j sqrt(x) exp(jx) int_{sqrt(x)}^inf exp(-j tau^2) dtau``
    """
    x = np.asarray(x, dtype=float)
    sq = np.sqrt(x)
    z = sq * math.sqrt(2 / math.pi)
    s, c = _fresnel_integrals(z)
    tail = math.sqrt(math.pi / 2) * ((0.5 - c) - 1j * (0.5 - s))
    return 2j * sq * np.exp(1j * x) * tail


def _utd_term(n, k, big_l, beta, sign):
    """cot((pi + sign*beta) / 2n) * F(k L a(beta)), with the boundary limit."""
    big_n = np.round((beta + sign * math.pi) / (2 * math.pi * n))
    eps = math.pi + sign * (beta - 2 * math.pi * n * big_n)
    a = 2 * np.cos((2 * math.pi * n * big_n - beta) / 2) ** 2
    near = np.abs(eps) < 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        regular = (1 / np.tan((math.pi + sign * beta) / (2 * n))) * transition_function(k * big_l * a)
    # on the boundary itself the open-set rule counts the GO ray as lit
    sgn = np.where(eps >= 0, 1.0, -1.0)
    limit = n * (np.sqrt(2 * math.pi * k * big_l) * sgn
                 - 2 * k * big_l * eps * np.exp(1j * math.pi / 4)) * np.exp(1j * math.pi / 4)
    return np.where(near, limit, regular)


def utd_coefficient(n, k, big_l, phi_inc, phi_dif, beta0, r0=-1.0, rn=-1.0):
    """Wedge diffraction coefficient without the spreading factor.

    ``r0``/``rn`` weight the reflection terms of the 0-face and n-face
    (``-1``/``-1`` soft PEC, ``+1``/``+1`` hard PEC).
    """
    beta_m = np.asarray(phi_dif, dtype=float) - phi_inc
    beta_p = np.asarray(phi_dif, dtype=float) + phi_inc
    pref = -np.exp(-1j * math.pi / 4) / (2 * n * math.sqrt(2 * math.pi * k) * np.sin(beta0))
    d = (_utd_term(n, k, big_l, beta_m, +1) + _utd_term(n, k, big_l, beta_m, -1)
         + r0 * _utd_term(n, k, big_l, beta_p, -1) + rn * _utd_term(n, k, big_l, beta_p, +1))
    return (pref * d)[()]


def _face_reflection(face, theta, pol, f):
    if face is None:
        return fresnel_interface(PEC, theta, pol)
    eps, thickness = face
    if eps is PEC:
        return fresnel_interface(PEC, theta, pol)
    theta = np.minimum(theta, math.pi / 2 - 1e-9)
    return fresnel_slab(eps, theta, pol, f, thickness)[0]


def utd_diffraction(n, s_i, s_d, phi_inc, phi_dif, beta0, f, pol, face0=None, facen=None):
    """Scaled UTD wedge coefficient including the spherical-wave spreading factor.

    Multiplying the incident field at the edge by the returned value and by
    ``exp(-j k s_d)`` gives the diffracted field at the receiver.

    Parameters
    ----------
    n : float
        Exterior wedge parameter (``n = 2`` half-plane, ``1.5`` right-angle wedge).
    s_i, s_d : float
        Source-to-edge and edge-to-receiver distances (m).
    phi_inc, phi_dif : float
        Incidence and diffraction angles measured from the 0-face (rad).
    beta0 : float
        Angle between the incident ray and the edge, in ``(0, pi)``.
    f : float
        Frequency (Hz).
    pol : Polarization
        TE maps to the soft coefficient, TM to the hard one.
    face0, facen : tuple or None
        ``(eps, thickness)`` of the two faces; ``None`` means PEC.

    Notes
    -----
    Lossy faces weight the reflection terms with the face Fresnel coefficient
    evaluated at incidence ``|phi - phi'| / 2`` from the normal. That angle is
    exact on each face's reflection boundary and symmetric under swapping
    source and receiver, so the coefficient stays reciprocal.
    """
    if not 0 < beta0 < math.pi:
        raise ValueError("beta0 must lie in (0, pi)")
    if not (s_i > 0 and s_d > 0):
        raise ValueError("distances must be positive")
    if not (0 <= phi_inc <= n * math.pi + 1e-9 and 0 <= phi_dif <= n * math.pi + 1e-9):
        raise ValueError("angles must lie in the exterior wedge [0, n*pi]")
    pol = Polarization(pol)
    k = 2 * math.pi * f / C0
    big_l = s_i * s_d / (s_i + s_d) * math.sin(beta0) ** 2
    theta = abs(phi_dif - phi_inc) / 2
    theta = min(theta, math.pi / 2 - 1e-9)
    r0 = _face_reflection(face0, theta, pol, f)
    rn = _face_reflection(facen, theta, pol, f)
    d = utd_coefficient(n, k, big_l, phi_inc, phi_dif, beta0, r0, rn)
    return complex(d * math.sqrt(s_i / (s_d * (s_i + s_d))))


def wedge_angles(edge_origin, edge_dir, face0_normal, face0_tangent, point):
    """Angle of ``point`` around the edge, measured from the 0-face into the exterior."""
    v = np.asarray(point, dtype=float) - edge_origin
    v = v - np.dot(v, edge_dir) * edge_dir
    phi = math.atan2(float(np.dot(v, face0_normal)), float(np.dot(v, face0_tangent)))
    return phi % (2 * math.pi)
