"""Scene representation, construction and spatial queries.

A scene is an axis-aligned hall shell (floor, ceiling, four walls) holding
yawed boxes. Coordinates: x along the hall length, y along the width, z up,
origin at a floor corner. Every facet normal points into free space.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .em import BUILTIN_MATERIALS, Material

GEO_EPS = _kernels.EPS
RASTER_STEP = 0.05


class SceneError(ValueError):
    """Invalid scene document; ``path`` points at the offending entry."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class Visibility(str, enum.Enum):
    LOS = "LoS"
    NLOS = "NLoS"


@dataclass(frozen=True)
class Hall:
    length: float
    width: float
    height: float
    wall_material: str = "concrete"
    floor_material: str = "concrete"
    ceiling_material: str = "concrete"


@dataclass(frozen=True)
class OrientedBox:
    center: tuple
    half_extents: tuple
    yaw: float = 0.0
    material: str = "metal"
    label: str = "object"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents))
        if len(self.center) != 3 or len(self.half_extents) != 3:
            raise ValueError("center and half_extents need three components")
        if min(self.half_extents) <= 0:
            raise ValueError("half_extents must be strictly positive")

    @property
    def axes(self):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])

    def corners(self):
        ctr = np.array(self.center)
        ax = self.axes
        h = self.half_extents
        return np.array([ctr + sx * h[0] * ax[0] + sy * h[1] * ax[1] + sz * h[2] * ax[2]
                         for sx, sy, sz in itertools.product((-1, 1), repeat=3)])

    def contains(self, point, tol=0.0):
        local = self.axes @ (np.asarray(point, dtype=float) - self.center)
        return bool(np.all(np.abs(local) < np.array(self.half_extents) - tol))

    def footprint_area(self):
        return 4.0 * self.half_extents[0] * self.half_extents[1]


@dataclass(frozen=True)
class Facet:
    """Planar rectangle spanned by ``origin + a*u + b*v`` for a, b in [0, 1]."""

    id: int
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    normal: np.ndarray
    material: str
    parent: int  # -1 for the hall shell
    label: str

    @property
    def vertices(self):
        o = self.origin
        return np.array([o, o + self.u, o + self.u + self.v, o + self.v])

    @property
    def area(self):
        return float(np.linalg.norm(self.u) * np.linalg.norm(self.v))

    @property
    def centroid(self):
        return self.origin + 0.5 * (self.u + self.v)


@dataclass(frozen=True)
class Edge:
    """Wedge edge between two facets.

    ``n`` is the exterior wedge parameter ``2 - interior_angle / pi``;
    concave shell corners carry ``convex=False`` and never diffract.
    """

    id: int
    p0: np.ndarray
    p1: np.ndarray
    facet_a: int
    facet_b: int
    n: float
    convex: bool = True

    @property
    def length(self):
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def direction(self):
        return (self.p1 - self.p0) / self.length


@dataclass(frozen=True)
class Hit:
    facet: int
    t: float
    point: np.ndarray
    normal: np.ndarray


def _facet(fid, origin, u, v, normal, material, parent, label):
    return Facet(fid, np.asarray(origin, float), np.asarray(u, float), np.asarray(v, float),
                 np.asarray(normal, float), material, parent, label)


# box faces in order: -x, +x, -y, +y, -z, +z
_BOX_FACES = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)]


@dataclass(frozen=True, eq=False)
class Scene:
    hall: Hall
    objects: tuple = ()
    materials: dict = field(default_factory=dict)
    name: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        merged = dict(BUILTIN_MATERIALS)
        merged.update(self.materials)
        object.__setattr__(self, "materials", merged)
        _validate(self)

    # -- derived geometry ----------------------------------------------------

    @cached_property
    def facets(self):
        h = self.hall
        L, W, H = h.length, h.width, h.height
        out = [
            _facet(0, (0, 0, 0), (L, 0, 0), (0, W, 0), (0, 0, 1), h.floor_material, -1, "floor"),
            _facet(1, (0, 0, H), (L, 0, 0), (0, W, 0), (0, 0, -1), h.ceiling_material, -1, "ceiling"),
            _facet(2, (0, 0, 0), (0, W, 0), (0, 0, H), (1, 0, 0), h.wall_material, -1, "wall"),
            _facet(3, (L, 0, 0), (0, W, 0), (0, 0, H), (-1, 0, 0), h.wall_material, -1, "wall"),
            _facet(4, (0, 0, 0), (L, 0, 0), (0, 0, H), (0, 1, 0), h.wall_material, -1, "wall"),
            _facet(5, (0, W, 0), (L, 0, 0), (0, 0, H), (0, -1, 0), h.wall_material, -1, "wall"),
        ]
        for b, box in enumerate(self.objects):
            ax = box.axes
            ctr = np.array(box.center)
            he = box.half_extents
            for axis, sign in _BOX_FACES:
                i, j = [a for a in range(3) if a != axis]
                origin = ctr + sign * he[axis] * ax[axis] - he[i] * ax[i] - he[j] * ax[j]
                u = 2 * he[i] * ax[i]
                v = 2 * he[j] * ax[j]
                out.append(_facet(len(out), origin, u, v, sign * ax[axis], box.material, b, box.label))
        return tuple(out)

    @cached_property
    def arrays(self):
        """Flat arrays consumed by the compiled kernels."""
        fs = self.facets
        fo = np.array([f.origin for f in fs])
        fu = np.array([f.u for f in fs])
        fv = np.array([f.v for f in fs])
        fn = np.array([f.normal for f in fs])
        fobj = np.array([f.parent for f in fs], dtype=np.int64)
        ftrans = np.array([f.parent >= 0 and not self.materials[f.material].is_pec for f in fs])
        if self.objects:
            oc = np.array([b.center for b in self.objects], dtype=float)
            orad = np.array([np.linalg.norm(b.half_extents) * (1 + 1e-9) + 1e-9
                             for b in self.objects])
        else:
            oc = np.zeros((0, 3))
            orad = np.zeros(0)
        return {
            "fo": fo, "fu": fu, "fv": fv, "fn": fn,
            "fuu": np.einsum("ij,ij->i", fu, fu), "fvv": np.einsum("ij,ij->i", fv, fv),
            "fobj": fobj, "ftrans": ftrans, "oc": oc, "orad": orad, "nshell": 6,
        }

    def kernel_args(self):
        a = self.arrays
        return (a["fo"], a["fu"], a["fv"], a["fn"], a["fuu"], a["fvv"], a["oc"], a["orad"], a["nshell"])

    @cached_property
    def edges(self):
        return tuple(extract_edges(self))

    @cached_property
    def diffraction_edges(self):
        """Convex edges whose two faces both border free space."""
        return tuple(e for e in self.edges if e.convex and not _edge_covered(self, e))

    @cached_property
    def edge_arrays(self):
        es = self.diffraction_edges
        if not es:
            z = np.zeros((0, 3))
            return {"e0": z, "evec": z, "edir": z, "elen": np.zeros(0), "emid": z, "ehalf": np.zeros(0)}
        e0 = np.array([e.p0 for e in es])
        e1 = np.array([e.p1 for e in es])
        evec = e1 - e0
        elen = np.linalg.norm(evec, axis=1)
        return {"e0": e0, "evec": evec, "edir": evec / elen[:, None], "elen": elen,
                "emid": 0.5 * (e0 + e1), "ehalf": 0.5 * elen}

    @cached_property
    def fingerprint(self):
        return hashlib.sha1(dump_scene(self).encode()).hexdigest()

    def material_of(self, facet_id):
        return self.materials[self.facets[facet_id].material]

    def inside_hall(self, point, tol=0.0):
        p = np.asarray(point, dtype=float)
        h = self.hall
        return bool(np.all(p > tol) and p[0] < h.length - tol and p[1] < h.width - tol
                    and p[2] < h.height - tol)

    def inside_object(self, point):
        return any(b.contains(point) for b in self.objects)


def _validate(scene):
    h = scene.hall
    for key in ("length", "width", "height"):
        if not getattr(h, key) > 0:
            raise SceneError("non-positive dimension", f"hall.{key}")
    for key in ("wall_material", "floor_material", "ceiling_material"):
        if getattr(h, key) not in scene.materials:
            raise SceneError(f"unknown material {getattr(h, key)!r}", f"hall.{key}")
    tol = 1e-9
    for i, box in enumerate(scene.objects):
        if box.material not in scene.materials:
            raise SceneError(f"unknown material {box.material!r}", f"objects[{i}].material")
        c = box.corners()
        if (c[:, 0].min() < -tol or c[:, 1].min() < -tol or c[:, 2].min() < -tol
                or c[:, 0].max() > h.length + tol or c[:, 1].max() > h.width + tol
                or c[:, 2].max() > h.height + tol):
            raise SceneError("object extends outside the hall", f"objects[{i}]")


# -- document I/O ---------------------------------------------------------------

_HALL_KEYS = {"length", "width", "height", "wall_material", "floor_material", "ceiling_material"}
_MATERIAL_KEYS = {"permittivity", "thickness_m", "scattering_s", "is_pec"}
_OBJECT_KEYS = {"label", "center", "half_extents", "yaw_rad", "material"}


def _check_keys(obj, allowed, path, required=()):
    if not isinstance(obj, dict):
        raise SceneError("expected an object", path)
    extra = set(obj) - set(allowed)
    if extra:
        raise SceneError(f"unknown field(s) {sorted(extra)}", path)
    for key in required:
        if key not in obj:
            raise SceneError(f"missing field {key!r}", path)


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SceneError("expected a finite number", path)
    return float(value)


def _vec3(value, path):
    if not isinstance(value, list) or len(value) != 3:
        raise SceneError("expected [x, y, z]", path)
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _parse_material(name, doc, path):
    _check_keys(doc, _MATERIAL_KEYS, path)
    perm = []
    entries = doc.get("permittivity", [])
    if not isinstance(entries, list):
        raise SceneError("expected a list", f"{path}.permittivity")
    for j, e in enumerate(entries):
        p = f"{path}.permittivity[{j}]"
        _check_keys(e, {"freq_hz", "eps_real", "eps_imag"}, p, ("freq_hz", "eps_real", "eps_imag"))
        perm.append((_number(e["freq_hz"], p), _number(e["eps_real"], p), _number(e["eps_imag"], p)))
    try:
        return Material(
            name, tuple(perm),
            _number(doc.get("thickness_m", 0.2), f"{path}.thickness_m"),
            _number(doc.get("scattering_s", 0.0), f"{path}.scattering_s"),
            bool(doc.get("is_pec", False)),
        )
    except ValueError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(str(exc), path) from None


def load_scene(text):
    """Parse and validate a scene JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"malformed document: {exc}") from None
    _check_keys(doc, {"name", "hall", "materials", "objects"}, "", ("hall",))
    hdoc = doc["hall"]
    _check_keys(hdoc, _HALL_KEYS, "hall", ("length", "width", "height"))
    hall_kw = {k: _number(hdoc[k], f"hall.{k}") for k in ("length", "width", "height")}
    for k in ("wall_material", "floor_material", "ceiling_material"):
        if k in hdoc:
            hall_kw[k] = str(hdoc[k])
    materials = {}
    mdoc = doc.get("materials", {})
    if not isinstance(mdoc, dict):
        raise SceneError("expected an object", "materials")
    for name, m in mdoc.items():
        materials[name] = _parse_material(name, m, f"materials.{name}")
    objects = []
    odoc = doc.get("objects", [])
    if not isinstance(odoc, list):
        raise SceneError("expected a list", "objects")
    for i, o in enumerate(odoc):
        p = f"objects[{i}]"
        _check_keys(o, _OBJECT_KEYS, p, ("center", "half_extents", "material"))
        try:
            objects.append(OrientedBox(
                _vec3(o["center"], f"{p}.center"),
                _vec3(o["half_extents"], f"{p}.half_extents"),
                _number(o.get("yaw_rad", 0.0), f"{p}.yaw_rad"),
                str(o["material"]),
                str(o.get("label", "object")),
            ))
        except SceneError:
            raise
        except ValueError as exc:
            raise SceneError(str(exc), p) from None
    return Scene(Hall(**hall_kw), tuple(objects), materials, str(doc.get("name", "scene")))


def load_scene_file(path):
    with open(path) as fh:
        return load_scene(fh.read())


def scene_to_dict(scene):
    h = scene.hall
    used = {h.wall_material, h.floor_material, h.ceiling_material}
    used.update(b.material for b in scene.objects)
    return {
        "name": scene.name,
        "hall": {"length": h.length, "width": h.width, "height": h.height,
                 "wall_material": h.wall_material, "floor_material": h.floor_material,
                 "ceiling_material": h.ceiling_material},
        "materials": {k: scene.materials[k].to_dict() for k in sorted(used)},
        "objects": [
            {"label": b.label, "center": list(b.center), "half_extents": list(b.half_extents),
             "yaw_rad": b.yaw, "material": b.material}
            for b in scene.objects
        ],
    }


def dump_scene(scene):
    """Canonical JSON text of ``scene``."""
    return json.dumps(scene_to_dict(scene), indent=1)


# -- queries ----------------------------------------------------------------------

def intersect(scene, origin, direction, t_max=np.inf):
    """Nearest facet hit along a ray with ``t`` in ``(1e-6, t_max)``, or None."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    t, f = _kernels.nearest(o[0], o[1], o[2], d[0], d[1], d[2], float(t_max),
                            *_scene_args(scene))
    if f < 0:
        return None
    fac = scene.facets[f]
    return Hit(int(f), float(t), o + t * d, fac.normal.copy())


def _scene_args(scene):
    a = scene.arrays
    return (a["fo"], a["fu"], a["fv"], a["fn"], a["fuu"], a["fvv"], a["oc"], a["orad"], a["nshell"])


def segments_blocked(scene, a, b):
    """Vectorized open-segment obstruction test for point arrays ``a``, ``b``."""
    a = np.ascontiguousarray(np.atleast_2d(a), dtype=float)
    b = np.ascontiguousarray(np.atleast_2d(b), dtype=float)
    a, b = np.broadcast_arrays(a, b)
    return _kernels.blocked_many(np.ascontiguousarray(a), np.ascontiguousarray(b), *_scene_args(scene))


def classify_visibility(scene, a, b):
    """LoS iff the open segment ``(a, b)`` crosses no facet interior."""
    if np.allclose(a, b):
        raise ValueError("endpoints must differ")
    return Visibility.NLOS if segments_blocked(scene, a, b)[0] else Visibility.LOS


def clutter_density(scene, step=RASTER_STEP):
    """Union footprint of all objects divided by the hall floor area."""
    h = scene.hall
    if not scene.objects:
        return 0.0
    nx = int(math.ceil(h.length / step))
    ny = int(math.ceil(h.width / step))
    mask = np.zeros((nx, ny), dtype=bool)
    xs = (np.arange(nx) + 0.5) * step
    ys = (np.arange(ny) + 0.5) * step
    for box in scene.objects:
        c = box.corners()
        i0 = max(int(np.floor(c[:, 0].min() / step)), 0)
        i1 = min(int(np.ceil(c[:, 0].max() / step)), nx)
        j0 = max(int(np.floor(c[:, 1].min() / step)), 0)
        j1 = min(int(np.ceil(c[:, 1].max() / step)), ny)
        gx, gy = np.meshgrid(xs[i0:i1] - box.center[0], ys[j0:j1] - box.center[1], indexing="ij")
        cy, sy = math.cos(box.yaw), math.sin(box.yaw)
        lx = cy * gx + sy * gy
        ly = -sy * gx + cy * gy
        inside = (np.abs(lx) < box.half_extents[0]) & (np.abs(ly) < box.half_extents[1])
        mask[i0:i1, j0:j1] |= inside
    cell_area = mask.sum() * step * step
    # cells straddling the far walls are only partially inside the hall
    return float(min(cell_area / (h.length * h.width), 1.0))


def extract_edges(scene):
    """All box edges (convex, ``n = 1.5``) plus the twelve concave shell corners."""
    edges = []
    h = scene.hall
    L, W, H = h.length, h.width, h.height
    corners = {
        # (facet_a, facet_b): endpoints
        (0, 2): ((0, 0, 0), (0, W, 0)), (0, 3): ((L, 0, 0), (L, W, 0)),
        (0, 4): ((0, 0, 0), (L, 0, 0)), (0, 5): ((0, W, 0), (L, W, 0)),
        (1, 2): ((0, 0, H), (0, W, H)), (1, 3): ((L, 0, H), (L, W, H)),
        (1, 4): ((0, 0, H), (L, 0, H)), (1, 5): ((0, W, H), (L, W, H)),
        (2, 4): ((0, 0, 0), (0, 0, H)), (2, 5): ((0, W, 0), (0, W, H)),
        (3, 4): ((L, 0, 0), (L, 0, H)), (3, 5): ((L, W, 0), (L, W, H)),
    }
    for (fa, fb), (p0, p1) in corners.items():
        edges.append(Edge(len(edges), np.array(p0, float), np.array(p1, float), fa, fb, 0.5, False))
    for b, box in enumerate(scene.objects):
        first = 6 + 6 * b
        ax = box.axes
        ctr = np.array(box.center)
        he = box.half_extents
        for ia, ib in itertools.combinations(range(6), 2):
            axis_a, sign_a = _BOX_FACES[ia]
            axis_b, sign_b = _BOX_FACES[ib]
            if axis_a == axis_b:
                continue
            axis_c = 3 - axis_a - axis_b
            base = ctr + sign_a * he[axis_a] * ax[axis_a] + sign_b * he[axis_b] * ax[axis_b]
            p0 = base - he[axis_c] * ax[axis_c]
            p1 = base + he[axis_c] * ax[axis_c]
            edges.append(Edge(len(edges), p0, p1, first + ia, first + ib, 1.5, True))
    return edges


def _edge_covered(scene, edge, delta=1e-4):
    """True if either face of the edge is flush against other geometry."""
    na = scene.facets[edge.facet_a].normal
    nb = scene.facets[edge.facet_b].normal
    mid = 0.5 * (edge.p0 + edge.p1)
    for probe in (mid + delta * nb - delta * na, mid + delta * na - delta * nb):
        if not scene.inside_hall(probe) or scene.inside_object(probe):
            return True
    return False


def edge_frame(scene, edge):
    """(origin, unit direction, 0-face normal, 0-face tangent) of an edge."""
    fa = scene.facets[edge.facet_a]
    e = edge.direction
    w = fa.centroid - edge.p0
    t0 = w - np.dot(w, e) * e
    t0 /= np.linalg.norm(t0)
    return edge.p0, e, fa.normal, t0


# -- the measurement hall -----------------------------------------------------------

PAPER_HALL = (74.4, 24.4, 4.6)
PAPER_BS = (4.0, 12.2, 1.85)
UT_HEIGHT = 1.44

# Table of object classes: label -> (length, width, height, material, count)
PAPER_OBJECTS = {
    "machine": (6.7, 2.4, 2.0, "metal", 12),
    "storage rack": (2.3, 1.1, 4.0, "metal", 10),
    "cupboard": (1.8, 1.0, 3.6, "metal", 4),
    "worktable": (6.0, 2.0, 0.8, "metal", 5),
    "table": (3.2, 1.6, 0.5, "wood", 5),
    "crate": (2.0, 1.5, 1.0, "wood", 7),
}

_LOS_Y = 12.2
_NLOS_Y = 4.0


def paper_positions():
    """Default BS and the 75 UT positions (1-38 LoS corridor, 39-75 NLoS row)."""
    bs = np.array(PAPER_BS)
    dz = PAPER_BS[2] - UT_HEIGHT
    first = math.sqrt(6.1**2 - dz**2)
    uts = [(bs[0] + first + k, _LOS_Y, UT_HEIGHT) for k in range(38)]
    dy = _LOS_Y - _NLOS_Y
    first_nlos = math.sqrt(16.5**2 - dz**2 - dy**2)
    uts += [(bs[0] + first_nlos + k, _NLOS_Y, UT_HEIGHT) for k in range(37)]
    return bs, np.array(uts)


def _box(label, x0, y0, length, width, height, material, along_x=True):
    lx, ly = (length, width) if along_x else (width, length)
    return OrientedBox((x0 + lx / 2, y0 + ly / 2, height / 2), (lx / 2, ly / 2, height / 2),
                       0.0, material, label)


def build_paper_scene(seed=1):
    """Factory hall with the Table-style object inventory at ~18.3 % clutter.

    Two machine rows flank a central LoS corridor; the southern row is
    continuous so that the NLoS UT row behind it is fully shadowed. The
    remaining objects are placed by a seeded rejection sampler outside the
    corridor, the UT rows and the machine rows.
    """
    rng = np.random.default_rng(seed)
    L, W, H = PAPER_HALL
    objs = []
    ml, mw, mh, mmat, _ = PAPER_OBJECTS["machine"]
    for k in range(6):
        objs.append(_box("machine", 8.0 + k * ml, 6.0, ml, mw, mh, mmat))
    for k in range(6):
        objs.append(_box("machine", 8.0 + k * 8.0 + rng.uniform(0.0, 1.0), 16.0, ml, mw, mh, mmat))

    # keep-out zones (x0, y0, x1, y1): corridor, NLoS UT row, BS surroundings
    keep_out = [
        (0.0, 9.2, 52.0, 15.2),
        (14.0, 2.6, 58.0, 5.4),
        (0.0, 8.0, 7.0, 16.4),
    ]
    placed = [_footprint(o) for o in objs]

    def free(rect, margin=0.3):
        x0, y0, x1, y1 = rect
        if x0 < 0.2 or y0 < 0.2 or x1 > L - 0.2 or y1 > W - 0.2:
            return False
        for kx0, ky0, kx1, ky1 in keep_out:
            if x0 < kx1 and x1 > kx0 and y0 < ky1 and y1 > ky0:
                return False
        for px0, py0, px1, py1 in placed:
            if x0 < px1 + margin and x1 > px0 - margin and y0 < py1 + margin and y1 > py0 - margin:
                return False
        return True

    for label in ("storage rack", "cupboard", "worktable", "table", "crate"):
        length, width, height, mat, count = PAPER_OBJECTS[label]
        for _ in range(count):
            for _attempt in range(10_000):
                along_x = bool(rng.integers(0, 2))
                lx, ly = (length, width) if along_x else (width, length)
                if label in ("storage rack", "cupboard"):
                    # against the long walls
                    x0 = rng.uniform(1.0, L - 1.0 - lx)
                    y0 = 0.3 if rng.integers(0, 2) else W - 0.3 - ly
                else:
                    x0 = rng.uniform(0.5, L - 0.5 - lx)
                    y0 = rng.uniform(0.5, W - 0.5 - ly)
                x0 = round(x0, 2)
                rect = (x0, y0, x0 + lx, y0 + ly)
                if free(rect):
                    box = _box(label, x0, y0, length, width, height, mat, along_x)
                    objs.append(box)
                    placed.append(rect)
                    break
            else:  # pragma: no cover - the zones leave ample room
                raise RuntimeError(f"could not place {label}")
    return Scene(Hall(L, W, H), tuple(objs), {}, "paper-hall")


def _footprint(box):
    c = box.corners()
    return (c[:, 0].min(), c[:, 1].min(), c[:, 0].max(), c[:, 1].max())
