"""Path discovery and multipath-component assembly.

Specular paths are found by shooting a Fibonacci ray bundle from the
transmitter and registering rays that pass through a reception sphere
around the receiver. Every registered interaction chain is then re-solved
exactly with images, so the returned geometry does not depend on the ray
density once the chain has been seen.

Diffraction uses the same bundles from both ends: a transmitter-side ray
passing close to an edge supplies the chain before the edge and a
receiver-side ray passing close to it supplies the chain after it. Each
compatible pair is refined to the exact diffraction point on the edge.
"""

from __future__ import annotations

import enum
import functools
import math
import re
import threading
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .em import (C0, Polarization, RadioConfig, antenna_gain, complex_permittivity,
                 fresnel_slab, friis_gain, lambertian_scatter_gain, utd_diffraction,
                 wedge_angles)
from .geometry import classify_visibility, edge_frame, segments_blocked

DEFAULT_RAYS = 200_000
RECEPTION_FACTOR = 1.0
DEFAULT_TILE = 0.5
_REFINE_CHUNK = 20_000


class InteractionKind(str, enum.Enum):
    REFLECTION = "R"
    TRANSMISSION = "T"
    DIFFRACTION = "D"
    DIFFUSE = "S"


class MPCClass(str, enum.Enum):
    LOS = "LoS"
    SMPC = "SMPC"
    DMPC = "DMPC"


@dataclass(frozen=True)
class InteractionBudget:
    """Per-path interaction limits.

    A transmission counts one traversal of an object (entry and exit face).
    At most one diffraction is supported.
    """

    max_reflections: int = 2
    max_diffractions: int = 1
    max_transmissions: int = 1
    diffuse_enabled: bool = False
    diffuse_surfaces: tuple = ("walls", "machines")

    def __post_init__(self):
        for name in ("max_reflections", "max_diffractions", "max_transmissions"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer")
        if self.max_diffractions > 1:
            raise ValueError("at most one diffraction per path is supported")
        object.__setattr__(self, "diffuse_surfaces", tuple(self.diffuse_surfaces))

    @classmethod
    def parse(cls, text, diffuse_enabled=False, diffuse_surfaces=("walls", "machines")):
        """Parse the compact ``<R>r<D>d<T>t`` form, e.g. ``"3r1d1t"``."""
        m = re.fullmatch(r"\s*(\d+)r(\d+)d(\d+)t\s*", text)
        if not m:
            raise ValueError(f"budget {text!r} does not match <R>r<D>d<T>t")
        r, d, t = (int(g) for g in m.groups())
        return cls(r, d, t, diffuse_enabled, tuple(diffuse_surfaces))

    @property
    def label(self):
        return f"{self.max_reflections}r{self.max_diffractions}d{self.max_transmissions}t"


@dataclass(frozen=True)
class Interaction:
    kind: InteractionKind
    element: int  # facet id, or edge id for diffractions
    point: np.ndarray
    exit_facet: int = -1  # transmissions only
    exit_point: np.ndarray | None = None
    tile: tuple = ()  # diffuse only: (i, j)
    area: float = 0.0  # diffuse only

    @property
    def token(self):
        k = self.kind
        if k is InteractionKind.TRANSMISSION:
            return f"T{self.element}:{self.exit_facet}"
        if k is InteractionKind.DIFFUSE:
            return f"S{self.element}.{self.tile[0]}.{self.tile[1]}"
        return f"{k.value}{self.element}"


def _angles(vec):
    v = np.asarray(vec, dtype=float)
    v = v / np.linalg.norm(v)
    return (math.atan2(v[1], v[0]), math.asin(max(-1.0, min(1.0, v[2]))))


@dataclass(frozen=True, eq=False)
class PropagationPath:
    """Geometric ray path from ``vertices[0]`` (tx) to ``vertices[-1]`` (rx)."""

    interactions: tuple
    vertices: np.ndarray

    @property
    def signature(self):
        if not self.interactions:
            return "LoS"
        return "-".join(i.token for i in self.interactions)

    @property
    def length(self):
        return float(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1).sum())

    @property
    def delay(self):
        return self.length / C0

    @property
    def departure(self):
        return _angles(self.vertices[1] - self.vertices[0])

    @property
    def arrival(self):
        """Direction the wave arrives from, seen at the receiver."""
        return _angles(self.vertices[-2] - self.vertices[-1])

    def count(self, kind):
        return sum(1 for i in self.interactions if i.kind is kind)

    def sort_key(self):
        return (self.delay, self.signature)


@dataclass(frozen=True)
class MultipathComponent:
    delay: float
    power_dbm: float
    amplitude: complex
    aod: tuple
    aoa: tuple
    mpc_class: MPCClass
    signature: str
    noise_floor_dbm: float = -145.0

    @property
    def sub_noise(self):
        return self.power_dbm < self.noise_floor_dbm

    @property
    def has_diffraction(self):
        return self.signature != "LoS" and any(t.startswith("D") for t in self.signature.split("-"))

    def to_record(self):
        return {
            "delay_ns": self.delay * 1e9,
            "power_dbm": self.power_dbm,
            "aod_az_deg": math.degrees(self.aod[0]),
            "aod_el_deg": math.degrees(self.aod[1]),
            "aoa_az_deg": math.degrees(self.aoa[0]),
            "aoa_el_deg": math.degrees(self.aoa[1]),
            "class": self.mpc_class.value,
            "signature": self.signature,
        }

    @classmethod
    def from_record(cls, rec, noise_floor_dbm=-145.0):
        return cls(
            rec["delay_ns"] * 1e-9, rec["power_dbm"], complex(0.0),
            (math.radians(rec["aod_az_deg"]), math.radians(rec["aod_el_deg"])),
            (math.radians(rec["aoa_az_deg"]), math.radians(rec["aoa_el_deg"])),
            MPCClass(rec["class"]), rec["signature"], noise_floor_dbm,
        )


# -- ray launching ------------------------------------------------------------------

def launch_directions(n):
    """Golden-angle spiral of ``n`` unit vectors (rows)."""
    if n < 1:
        raise ValueError("need at least one ray")
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    az = i * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(az), r * np.sin(az), z])


def angular_spacing(n):
    return math.sqrt(4.0 * math.pi / n)


def _segment_capacity(n_rays, max_r, max_t):
    per_ray = sum(math.comb(r + t, t) for t in range(max_t + 1) for r in range(max_r + 1))
    return n_rays * per_ray


_bundle_lock = threading.Lock()


@functools.lru_cache(maxsize=4)
def _cached_bundle(scene, src, n_rays, max_r, max_t):
    return _shoot(scene, np.array(src), n_rays, max_r, max_t)


def _shoot(scene, src, n_rays, max_r, max_t):
    a = scene.arrays
    dirs = launch_directions(n_rays)
    cap = _segment_capacity(n_rays, max_r, max_t)
    return _kernels.shoot(np.asarray(src, dtype=float), dirs, cap, max_r, max_t,
                          a["fo"], a["fu"], a["fv"], a["fn"], a["fuu"], a["fvv"],
                          a["fobj"], a["ftrans"], a["oc"], a["orad"], a["nshell"])


def ray_bundle(scene, src, n_rays, budget, cache=True):
    """Segments of all ray trees launched from ``src`` (cached for transmitters)."""
    key = tuple(float(x) for x in src)
    if not cache:
        return _shoot(scene, np.array(key), n_rays, budget.max_reflections, budget.max_transmissions)
    with _bundle_lock:
        return _cached_bundle(scene, key, int(n_rays), budget.max_reflections,
                              budget.max_transmissions)


def _decode(code):
    kind = int(code) >> _kernels._SHIFT_KIND
    aux = (int(code) >> _kernels._SHIFT_AUX) & _kernels._MASK
    idx = int(code) & _kernels._MASK
    return kind, idx, aux


def _chain(row):
    return tuple(int(c) for c in row if c != 0)


def _chain_counts(chain):
    nr = sum(1 for c in chain if (c >> _kernels._SHIFT_KIND) == _kernels.KIND_R)
    return nr, len(chain) - nr


def _reverse_chain(chain):
    """Receiver-side chain re-expressed in transmitter-to-receiver order."""
    out = []
    for c in reversed(chain):
        kind, idx, aux = _decode(c)
        if kind == _kernels.KIND_T:
            c = int(_kernels.encode(kind, aux, idx))
        out.append(c)
    return tuple(out)


def _received_chains(bundle, rx, scale):
    seg_o, seg_d, seg_t, seg_l, seg_h, _ = bundle
    w = rx - seg_o
    s = np.einsum("ij,ij->i", w, seg_d)
    s = np.clip(s, 0.0, seg_t)
    closest = seg_o + s[:, None] * seg_d
    dist = np.linalg.norm(rx - closest, axis=1)
    hit = dist < (seg_l + s) * scale
    rows = seg_h[hit]
    rows = rows[np.any(rows != 0, axis=1)]
    if rows.size == 0:
        return set()
    return {_chain(r) for r in np.unique(rows, axis=0)}


def _edge_chains(scene, bundle, scale, tcap):
    ea = scene.edge_arrays
    if ea["e0"].shape[0] == 0:
        return {}
    seg_o, seg_d, seg_t, seg_l, seg_h, _ = bundle
    si, ei = _kernels.capture_edges(seg_o, seg_d, seg_t, seg_l, ea["e0"], ea["evec"],
                                    ea["emid"], ea["ehalf"], scale, tcap)
    out = {}
    if si.size == 0:
        return out
    pairs = np.unique(np.column_stack([ei, seg_h[si]]), axis=0)
    for row in pairs:
        out.setdefault(int(row[0]), set()).add(_chain(row[1:]))
    return out


# -- exact refinement -------------------------------------------------------------

def _refine(scene, tx, rx, chains):
    """Exact vertices for candidate chains; returns list of (chain, verts, vkind, vfac)."""
    if not chains:
        return []
    chains = sorted(chains)
    a = scene.arrays
    ea = scene.edge_arrays
    k = max(len(c) for c in chains)
    out = []
    for start in range(0, len(chains), _REFINE_CHUNK):
        block = chains[start:start + _REFINE_CHUNK]
        n = len(block)
        kinds = np.zeros((n, k), dtype=np.int64)
        ids = np.zeros((n, k), dtype=np.int64)
        aux = np.zeros((n, k), dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
        for c, chain in enumerate(block):
            counts[c] = len(chain)
            for j, code in enumerate(chain):
                kinds[c, j], ids[c, j], aux[c, j] = _decode(code)
        ok, verts, vkind, vfac, nverts = _kernels.refine(
            np.asarray(tx, float), np.asarray(rx, float), kinds, ids, aux, counts,
            a["fo"], a["fu"], a["fv"], a["fn"], a["fuu"], a["fvv"], a["oc"], a["orad"],
            a["nshell"], ea["e0"], ea["edir"], ea["elen"])
        for c in np.flatnonzero(ok):
            m = nverts[c]
            out.append((block[c], verts[c, :m].copy(), vkind[c, :m].copy(), vfac[c, :m].copy()))
    return out


def _build_path(scene, verts, vkind, vfac):
    inters = []
    v = 1
    edges = scene.diffraction_edges
    while v < len(verts) - 1:
        kv = int(vkind[v])
        if kv == _kernels.KIND_R:
            inters.append(Interaction(InteractionKind.REFLECTION, int(vfac[v]), verts[v]))
            v += 1
        elif kv == _kernels.KIND_T:
            inters.append(Interaction(InteractionKind.TRANSMISSION, int(vfac[v]), verts[v],
                                      int(vfac[v + 1]), verts[v + 1]))
            v += 2
        else:
            inters.append(Interaction(InteractionKind.DIFFRACTION, edges[int(vfac[v])].id, verts[v]))
            v += 1
    return PropagationPath(tuple(inters), verts)


def _diffraction_ok(scene, path):
    """Reject diffraction points where the incident ray runs along the edge."""
    for i in path.interactions:
        if i.kind is InteractionKind.DIFFRACTION:
            edge = scene.edges[i.element]
            j = _vertex_index(path, i)
            d_in = path.vertices[j] - path.vertices[j - 1]
            d_in /= np.linalg.norm(d_in)
            if abs(float(np.dot(d_in, edge.direction))) > 1.0 - 1e-9:
                return False
    return True


def _vertex_index(path, inter):
    for j, v in enumerate(path.vertices):
        if v is inter.point or np.array_equal(v, inter.point):
            return j
    raise LookupError("interaction point not on path")


def _check_endpoints(scene, tx, rx):
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if np.allclose(tx, rx):
        raise ValueError("tx and rx must differ")
    for name, p in (("tx", tx), ("rx", rx)):
        if not scene.inside_hall(p) or scene.inside_object(p):
            raise ValueError(f"{name} {p.tolist()} is not in free space inside the hall")
    return tx, rx


def trace_specular(scene, tx, rx, budget=InteractionBudget(), n_rays=DEFAULT_RAYS,
                   reception_factor=RECEPTION_FACTOR):
    """Specular, transmitted and diffracted paths between ``tx`` and ``rx``.

    Parameters
    ----------
    scene : Scene
    tx, rx : array_like
        End points in free space.
    budget : InteractionBudget
    n_rays : int
        Launch bundle size; the angular spacing is ``sqrt(4 pi / n_rays)``.
    reception_factor : float
        Reception sphere radius in units of ``L * spacing``.

    Returns
    -------
    list of PropagationPath
        Sorted by (delay, signature); at most one path per signature.
    """
    tx, rx = _check_endpoints(scene, tx, rx)
    scale = angular_spacing(n_rays) * reception_factor
    bundle = ray_bundle(scene, tx, n_rays, budget)
    chains = _received_chains(bundle, rx, scale)

    if budget.max_diffractions >= 1 and scene.edge_arrays["e0"].shape[0]:
        tcap = 4.0 * float(np.linalg.norm([scene.hall.length, scene.hall.width, scene.hall.height]))
        rx_bundle = ray_bundle(scene, rx, n_rays, budget, cache=False)
        near_tx = _edge_chains(scene, bundle, scale, tcap)
        near_rx = _edge_chains(scene, rx_bundle, scale, tcap)
        for e, side_a in near_tx.items():
            side_b = near_rx.get(e)
            if not side_b:
                continue
            d_code = int(_kernels.encode(_kernels.KIND_D, e, 0))
            rev_b = [(_reverse_chain(cb), _chain_counts(cb)) for cb in side_b]
            for ca in side_a:
                ra, ta = _chain_counts(ca)
                for cb, (rb, tb) in rev_b:
                    if ra + rb <= budget.max_reflections and ta + tb <= budget.max_transmissions:
                        chains.add(ca + (d_code,) + cb)

    paths = []
    for chain, verts, vkind, vfac in _refine(scene, tx, rx, chains):
        path = _build_path(scene, verts, vkind, vfac)
        if path.interactions and _diffraction_ok(scene, path):
            paths.append(path)
    if classify_visibility(scene, tx, rx).value == "LoS":
        paths.append(PropagationPath((), np.array([tx, rx])))
    paths.sort(key=PropagationPath.sort_key)
    return paths


# -- independent oracle ------------------------------------------------------------

def image_method_paths(scene, tx, rx, max_order):
    """All reflection paths up to ``max_order`` in an empty box room by images.

    Uses plain numpy and the analytic room planes only; meant as a reference
    for :func:`trace_specular`.
    """
    if scene.objects:
        raise ValueError("image method oracle supports empty rooms only")
    if not 0 <= max_order <= 3:
        raise ValueError("max_order must lie in [0, 3]")
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    h = scene.hall
    dims = np.array([h.length, h.width, h.height])
    # shell facet id -> (axis, plane coordinate); ids match Scene.facets
    planes = {0: (2, 0.0), 1: (2, dims[2]), 2: (0, 0.0), 3: (0, dims[0]), 4: (1, 0.0), 5: (1, dims[1])}

    def mirror(p, f):
        ax, c = planes[f]
        q = p.copy()
        q[ax] = 2 * c - q[ax]
        return q

    def inside(p, f):
        ax, _ = planes[f]
        others = [i for i in range(3) if i != ax]
        return all(0.0 < p[i] < dims[i] for i in others)

    paths = [PropagationPath((), np.array([tx, rx]))]
    for order in range(1, max_order + 1):
        for seq in np.ndindex(*(6,) * order):
            if any(seq[i] == seq[i + 1] for i in range(order - 1)):
                continue
            images = [tx]
            for f in seq:
                images.append(mirror(images[-1], f))
            pts = []
            target = rx
            valid = True
            for j in range(order - 1, -1, -1):
                f = seq[j]
                ax, c = planes[f]
                img = images[j + 1]
                denom = target[ax] - img[ax]
                if abs(denom) < 1e-15:
                    valid = False
                    break
                u = (c - img[ax]) / denom
                if not 0.0 < u < 1.0:
                    valid = False
                    break
                p = img + u * (target - img)
                p[ax] = c
                if not inside(p, f):
                    valid = False
                    break
                pts.append(p)
                target = p
            if not valid:
                continue
            pts.reverse()
            verts = np.array([tx, *pts, rx])
            inters = tuple(Interaction(InteractionKind.REFLECTION, int(f), p) for f, p in zip(seq, pts))
            paths.append(PropagationPath(inters, verts))
    paths.sort(key=PropagationPath.sort_key)
    return paths


# -- diffuse ------------------------------------------------------------------------

def _normalize_label(token):
    t = token.strip().lower()
    return t[:-1] if t.endswith("s") and len(t) > 1 else t


def select_facets(scene, surfaces):
    """Facet ids matching a label filter (``"walls"``, ``"machines"``...) or ids."""
    ids = set()
    labels = set()
    for s in surfaces:
        if isinstance(s, (int, np.integer)):
            ids.add(int(s))
        elif str(s).strip().isdigit():
            ids.add(int(s))
        else:
            labels.add(_normalize_label(str(s)))
    return [f.id for f in scene.facets
            if f.id in ids or _normalize_label(f.label) in labels]


def enumerate_diffuse(scene, tx, rx, tile_size=DEFAULT_TILE, surfaces=("walls", "machines")):
    """Single-bounce paths tx -> tile centre -> rx over the selected facets."""
    if not tile_size > 0:
        raise ValueError("tile_size must be positive")
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    centres, meta = [], []
    for fid in select_facets(scene, surfaces):
        fac = scene.facets[fid]
        if np.dot(tx - fac.origin, fac.normal) <= 0 or np.dot(rx - fac.origin, fac.normal) <= 0:
            continue
        lu = np.linalg.norm(fac.u)
        lv = np.linalg.norm(fac.v)
        nu = max(1, math.ceil(lu / tile_size - 1e-9))
        nv = max(1, math.ceil(lv / tile_size - 1e-9))
        area = fac.area / (nu * nv)
        a = (np.arange(nu) + 0.5) / nu
        b = (np.arange(nv) + 0.5) / nv
        for i in range(nu):
            for j in range(nv):
                centres.append(fac.origin + a[i] * fac.u + b[j] * fac.v)
                meta.append((fid, i, j, area))
    if not centres:
        return []
    pts = np.array(centres)
    blocked = segments_blocked(scene, np.broadcast_to(tx, pts.shape), pts)
    blocked |= segments_blocked(scene, pts, np.broadcast_to(rx, pts.shape))
    paths = []
    for k in np.flatnonzero(~blocked):
        fid, i, j, area = meta[k]
        inter = Interaction(InteractionKind.DIFFUSE, fid, pts[k], tile=(i, j), area=area)
        paths.append(PropagationPath((inter,), np.array([tx, pts[k], rx])))
    paths.sort(key=PropagationPath.sort_key)
    return paths


# -- assembly -------------------------------------------------------------------------

def _polarization(d_in, normal):
    """Vertical-field branch: TE when the perpendicular axis is the more vertical one."""
    perp = np.cross(d_in, normal)
    nrm = np.linalg.norm(perp)
    if nrm < 1e-12:
        return Polarization.TE  # normal incidence: both branches coincide
    perp /= nrm
    par = np.cross(perp, d_in)
    return Polarization.TE if abs(perp[2]) >= abs(par[2]) else Polarization.TM


def _incidence(d_in, normal):
    c = min(1.0, abs(float(np.dot(d_in, normal))))
    return min(math.acos(c), math.pi / 2 - 1e-9)


def _unit(v):
    return v / np.linalg.norm(v)


def _snap(phi, n):
    # rounding can leave a face-grazing ray a hair inside the wedge
    if phi <= n * math.pi:
        return phi
    return 0.0 if phi > (n + 2) * math.pi / 2 else n * math.pi


def _face(scene, facet_id, f):
    mat = scene.material_of(facet_id)
    if mat.is_pec:
        return None
    return (complex_permittivity(mat, f), mat.thickness)


def path_gain(scene, path, f):
    """Complex field factor and linear power gain of a path (isotropic antennas)."""
    lam = C0 / f
    verts = path.vertices
    if path.interactions and path.interactions[0].kind is InteractionKind.DIFFUSE:
        inter = path.interactions[0]
        fac = scene.facets[inter.element]
        mat = scene.material_of(inter.element)
        d_i = verts[1] - verts[0]
        d_s = verts[2] - verts[1]
        ri, rs = np.linalg.norm(d_i), np.linalg.norm(d_s)
        th_i = math.acos(min(1.0, abs(float(np.dot(d_i / ri, fac.normal)))))
        th_s = math.acos(min(1.0, abs(float(np.dot(d_s / rs, fac.normal)))))
        g = float(lambertian_scatter_gain(mat.scattering_s, inter.area, th_i, th_s, ri, rs, f))
        return complex(math.sqrt(g)), g
    coeff = complex(1.0)
    seg = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    spread = math.sqrt(friis_gain(f, total))
    v = 1
    for inter in path.interactions:
        d_in = _unit(verts[v] - verts[v - 1])
        if inter.kind is InteractionKind.REFLECTION:
            fac = scene.facets[inter.element]
            mat = scene.material_of(inter.element)
            r, _ = fresnel_slab(complex_permittivity(mat, f), _incidence(d_in, fac.normal),
                                _polarization(d_in, fac.normal), f, mat.thickness)
            coeff *= complex(r)
            v += 1
        elif inter.kind is InteractionKind.TRANSMISSION:
            # geometric mean over entry and exit faces keeps non-parallel
            # traversals reciprocal; parallel faces reduce to the plain slab
            mat = scene.material_of(inter.element)
            eps = complex_permittivity(mat, f)
            t_eff = complex(1.0)
            for fid in (inter.element, inter.exit_facet):
                n_f = scene.facets[fid].normal
                _, t = fresnel_slab(eps, _incidence(d_in, n_f), _polarization(d_in, n_f),
                                    f, mat.thickness)
                t_eff *= np.sqrt(complex(t))
            coeff *= t_eff
            v += 2
        else:
            edge = scene.edges[inter.element]
            origin, e_dir, n0, t0 = edge_frame(scene, edge)
            s_i = cum[v]
            s_d = total - s_i
            d_out = _unit(verts[v + 1] - verts[v])
            beta0 = math.acos(max(-1.0, min(1.0, float(np.dot(d_in, e_dir)))))
            phi_i = _snap(wedge_angles(origin, e_dir, n0, t0, verts[v] - d_in), edge.n)
            phi_d = _snap(wedge_angles(origin, e_dir, n0, t0, verts[v] + d_out), edge.n)
            pol = Polarization.TE if abs(e_dir[2]) >= math.sqrt(0.5) else Polarization.TM
            d = utd_diffraction(edge.n, s_i, s_d, phi_i, phi_d, beta0, f, pol,
                                _face(scene, edge.facet_a, f), _face(scene, edge.facet_b, f))
            coeff *= d
            # the Friis term carries 1/total; the diffracted field needs 1/s_i
            spread = lam / (4 * math.pi * s_i)
            v += 1
    field_factor = spread * coeff
    return field_factor, abs(field_factor) ** 2


def classify_path(path):
    if not path.interactions:
        return MPCClass.LOS
    if any(i.kind is InteractionKind.DIFFUSE for i in path.interactions):
        return MPCClass.DMPC
    return MPCClass.SMPC


def assemble_mpcs(paths, scene, radio=RadioConfig(), calib=None):
    """Turn geometric paths into calibrated multipath components.

    Paths with exactly zero gain (non-scattering tiles, opaque slabs) carry
    no energy and are dropped; everything else is kept, including
    components below the noise floor.
    """
    f = radio.frequency
    out = []
    for path in paths:
        field_factor, g = path_gain(scene, path, f)
        d0 = _unit(path.vertices[1] - path.vertices[0])
        d1 = _unit(path.vertices[-2] - path.vertices[-1])
        g_ant = antenna_gain(radio.tx_antenna, d0) * antenna_gain(radio.rx_antenna, d1)
        g *= g_ant
        if g <= 0.0:
            continue
        delay = path.delay
        amp = field_factor * math.sqrt(g_ant) * np.exp(-2j * math.pi * f * delay)
        amp *= 10 ** (radio.tx_power_dbm / 20) * 1e-3 ** 0.5
        out.append(MultipathComponent(
            delay, radio.tx_power_dbm + 10 * math.log10(g), complex(amp),
            path.departure, path.arrival, classify_path(path), path.signature,
            radio.noise_floor_dbm))
    if calib is not None:
        from .calibrate import apply_offsets  # calibrate imports this module

        out = apply_offsets(out, calib)
    return out


def trace(scene, tx, rx, budget=InteractionBudget(), n_rays=DEFAULT_RAYS,
          tile_size=DEFAULT_TILE):
    """All paths allowed by ``budget``: specular set plus diffuse tiles if enabled."""
    paths = trace_specular(scene, tx, rx, budget, n_rays)
    if budget.diffuse_enabled:
        paths = paths + enumerate_diffuse(scene, tx, rx, tile_size, budget.diffuse_surfaces)
        paths.sort(key=PropagationPath.sort_key)
    return paths


def sort_mpcs(mpcs):
    return sorted(mpcs, key=lambda m: (m.delay, m.signature))


__all__ = [
    "InteractionBudget", "InteractionKind", "Interaction", "PropagationPath",
    "MultipathComponent", "MPCClass", "launch_directions", "trace_specular",
    "image_method_paths", "enumerate_diffuse", "assemble_mpcs", "trace", "path_gain",
]
