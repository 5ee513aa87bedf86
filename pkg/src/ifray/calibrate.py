"""Measurement-driven tuning layer.

Per-class dB offsets on traced components, material overrides by object
label, a scalar mismatch objective against digitized reference curves and
a trace-once offset fit.
"""

from __future__ import annotations

import dataclasses
import fnmatch
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import UTResult, compute_pdp, empirical_cdf, large_scale_params, run_p2mp
from .em import MACHINE_EQUIVALENT, Material, RadioConfig
from .geometry import OrientedBox, Scene
from .tracer import DEFAULT_RAYS, DEFAULT_TILE, InteractionBudget, MPCClass

DECILES = np.linspace(0.1, 0.9, 9)
SLOPE_WINDOW_NS = 200.0
DEFAULT_WEIGHTS = (1.0, 100.0, 0.5)


class EmptyObjectiveError(ValueError):
    """Raised when neither side offers anything to compare."""


@dataclass(frozen=True)
class CalibrationConfig:
    diffraction_offset_db: float = -10.0
    diffuse_offset_db: float = 12.0
    material_overrides: tuple = ()  # (label pattern, Material) pairs
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "material_overrides",
                           tuple((str(p), m) for p, m in self.material_overrides))
        if not (math.isfinite(self.diffraction_offset_db) and math.isfinite(self.diffuse_offset_db)):
            raise ValueError("offsets must be finite")
        for pattern, mat in self.material_overrides:
            if not isinstance(mat, Material):
                raise ValueError(f"override {pattern!r} does not name a Material")

    @classmethod
    def paper(cls):
        """Offsets -10/+12 dB and the equivalent machine slab."""
        return cls(-10.0, 12.0, (("machine", MACHINE_EQUIVALENT),), True)

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, (), False)

    def to_dict(self):
        return {
            "diffraction_offset_db": self.diffraction_offset_db,
            "diffuse_offset_db": self.diffuse_offset_db,
            "enabled": self.enabled,
            "material_overrides": [
                {"pattern": p, "material": dict(name=m.name, **m.to_dict())}
                for p, m in self.material_overrides
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        allowed = {"diffraction_offset_db", "diffuse_offset_db", "enabled", "material_overrides"}
        extra = set(doc) - allowed
        if extra:
            raise ValueError(f"unknown calibration field(s) {sorted(extra)}")
        overrides = []
        for o in doc.get("material_overrides", []):
            m = dict(o["material"])
            perm = tuple((e["freq_hz"], e["eps_real"], e["eps_imag"]) for e in m.get("permittivity", []))
            overrides.append((o["pattern"], Material(
                m.get("name", o["pattern"]), perm, m.get("thickness_m", 0.2),
                m.get("scattering_s", 0.0), m.get("is_pec", False))))
        return cls(float(doc.get("diffraction_offset_db", -10.0)),
                   float(doc.get("diffuse_offset_db", 12.0)), tuple(overrides),
                   bool(doc.get("enabled", True)))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def apply_offsets(mpcs, config):
    """Add the class offsets to component powers, once per component.

    Not idempotent: the assembly step owns the single call.
    """
    if not config.enabled:
        return list(mpcs)
    out = []
    for m in mpcs:
        off = 0.0
        if m.mpc_class is MPCClass.DMPC:
            off = config.diffuse_offset_db
        elif m.has_diffraction:
            off = config.diffraction_offset_db
        if off:
            m = dataclasses.replace(m, power_dbm=m.power_dbm + off,
                                    amplitude=m.amplitude * 10 ** (off / 20))
        out.append(m)
    return out


def swap_materials(scene, config):
    """Scene copy with overridden materials on objects whose label matches.

    The override keeps the scattering coefficient of the material it
    replaces. A pattern that matches nothing triggers a warning.
    """
    if not config.material_overrides:
        return scene
    materials = {k: v for k, v in scene.materials.items()}
    objects = list(scene.objects)
    for pattern, override in config.material_overrides:
        hits = 0
        for i, box in enumerate(objects):
            if not fnmatch.fnmatchcase(box.label, pattern):
                continue
            hits += 1
            s = materials[box.material].scattering_s
            name = override.name if s == override.scattering_s else f"{override.name}-s{s:g}"
            materials[name] = dataclasses.replace(override, name=name, scattering_s=s)
            objects[i] = OrientedBox(box.center, box.half_extents, box.yaw, name, box.label)
        if hits == 0:
            warnings.warn(f"material override pattern {pattern!r} matched no object", stacklevel=2)
    return Scene(scene.hall, tuple(objects), materials, scene.name)


# -- reference data -----------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementReference:
    """Digitized reference curves; all times in seconds, powers in dBm."""

    ds_cdf: dict  # {"los": ((ds, p), ...), "nlos": ...}
    pdp: tuple | None = None  # ((delay, power_dbm), ...)
    max_power_dbm: float | None = None

    def __post_init__(self):
        cdfs = {}
        for cls_name, pts in (self.ds_cdf or {}).items():
            key = cls_name.lower()
            if key not in ("los", "nlos"):
                raise ValueError(f"unknown DS class {cls_name!r}")
            pts = tuple((float(v), float(p)) for v, p in pts)
            vals = [v for v, _ in pts]
            probs = [p for _, p in pts]
            if any(b < a for a, b in zip(vals, vals[1:])) or any(b < a for a, b in zip(probs, probs[1:])):
                raise ValueError(f"{key} CDF must be non-decreasing")
            if any(not 0 <= p <= 1 for p in probs):
                raise ValueError(f"{key} CDF probabilities must lie in [0, 1]")
            if pts:
                cdfs[key] = pts
        object.__setattr__(self, "ds_cdf", cdfs)
        if self.pdp is not None:
            pdp = tuple((float(d), float(p)) for d, p in self.pdp)
            if any(d < 0 for d, _ in pdp):
                raise ValueError("reference PDP delays must be non-negative")
            object.__setattr__(self, "pdp", pdp or None)

    @property
    def empty(self):
        return not self.ds_cdf and not self.pdp and self.max_power_dbm is None

    def to_dict(self):
        return {
            "ds_cdf": {k: [[v * 1e9, p] for v, p in pts] for k, pts in self.ds_cdf.items()},
            "pdp": [[d * 1e9, p] for d, p in self.pdp] if self.pdp else [],
            "max_power_dbm": self.max_power_dbm,
        }

    @classmethod
    def from_dict(cls, doc):
        extra = set(doc) - {"ds_cdf", "pdp", "max_power_dbm"}
        if extra:
            raise ValueError(f"unknown reference field(s) {sorted(extra)}")
        ds = {k: [(v * 1e-9, p) for v, p in pts] for k, pts in doc.get("ds_cdf", {}).items()}
        pdp = [(d * 1e-9, p) for d, p in doc.get("pdp", [])] or None
        mp = doc.get("max_power_dbm")
        return cls(ds, pdp, None if mp is None else float(mp))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def average_pdp(results):
    """Linear average of per-UT PDPs on their common bin grid (dBm per bin)."""
    acc = {}
    n = 0
    width = None
    for r in results:
        if r.pdp is None:
            continue
        n += 1
        width = r.pdp.bin_width
        for d, p in r.pdp.bins:
            k = int(round(d / width - 0.5))
            acc[k] = acc.get(k, 0.0) + 10.0 ** (p / 10.0)
    if not n:
        return ()
    return tuple(((k + 0.5) * width, 10.0 * math.log10(v / n)) for k, v in sorted(acc.items()))


def _slope(points):
    pts = [(d * 1e9, p) for d, p in points if 0.0 <= d * 1e9 <= SLOPE_WINDOW_NS]
    if len(pts) < 2:
        return None
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.ptp(x) == 0:
        return None
    return float(np.polyfit(x, y, 1)[0])


def _deciles(points):
    vals = np.array([v for v, _ in points])
    probs = np.array([p for _, p in points])
    return np.interp(DECILES, probs, vals)


def reference_from_results(results):
    """Reference curves computed from simulated results (synthetic fixtures)."""
    ds = {}
    for key, label in (("los", "LoS"), ("nlos", "NLoS")):
        vals = [r.params.rms_ds for r in results
                if r.params is not None and r.los_class == label and math.isfinite(r.params.rms_ds)]
        if vals:
            ds[key] = empirical_cdf(vals)
    apdp = average_pdp(results)
    peak = max((p for _, p in apdp), default=None)
    return MeasurementReference(ds, apdp or None, peak)


def objective(sim, ref, weights=DEFAULT_WEIGHTS):
    """Weighted mismatch between simulated UT results and a reference.

    ``weights`` apply to the decile RMSE (per ns), the PDP slope difference
    (per dB/ns) and the peak power difference (per dB). A component that is
    missing on either side contributes zero.
    """
    sim = list(sim)
    if not sim:
        raise ValueError("no simulated results")
    if ref.empty:
        raise EmptyObjectiveError("reference has no populated component")
    w_ds, w_slope, w_peak = weights
    sq = []
    for key, label in (("los", "LoS"), ("nlos", "NLoS")):
        pts = ref.ds_cdf.get(key)
        if not pts:
            continue
        vals = sorted(r.params.rms_ds for r in sim
                      if r.params is not None and r.los_class == label
                      and math.isfinite(r.params.rms_ds))
        if not vals:
            continue
        diff = (_deciles(empirical_cdf(vals)) - _deciles(pts)) * 1e9
        sq.extend(diff.tolist())
    score = w_ds * math.sqrt(sum(d * d for d in sq) / len(sq)) if sq else 0.0
    apdp = average_pdp(sim)
    if ref.pdp and apdp:
        s_sim, s_ref = _slope(apdp), _slope(ref.pdp)
        if s_sim is not None and s_ref is not None:
            score += w_slope * abs(s_sim - s_ref)
    if ref.max_power_dbm is not None and apdp:
        score += w_peak * abs(max(p for _, p in apdp) - ref.max_power_dbm)
    return float(score)


# -- fitting ------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    config: CalibrationConfig
    score: float
    evaluations: int
    log: tuple  # (diffraction_db, diffuse_db, score) per evaluation, in order
    path: tuple = ()  # accepted iterates, same layout


def recharacterize(raw, config, radio=RadioConfig()):
    """Re-apply offsets to traced UT results and re-extract their parameters."""
    out = []
    for r in raw:
        if not r.ok:
            continue
        mpcs = apply_offsets(r.mpcs, config)
        out.append(UTResult(r.index, r.position, r.los_class, mpcs,
                            large_scale_params(mpcs, radio, r.los_class), compute_pdp(mpcs, radio)))
    return out


def fit_offsets(scene, bs, ut_list, radio=RadioConfig(), budget=InteractionBudget(), ref=None,
                diffraction_range=(-20.0, 0.0), diffuse_range=(0.0, 20.0), step=1.0,
                max_evals=200, base=None, n_rays=DEFAULT_RAYS, tile_size=DEFAULT_TILE,
                workers=None, weights=DEFAULT_WEIGHTS, raw_results=None):
    """Coordinate descent over the two class offsets on a fixed grid.

    Paths are traced once (uncalibrated); each evaluation only re-applies
    offsets and re-extracts parameters. Every iteration scores the four
    single-step neighbours and moves to the best one if it improves. When
    none does, the four diagonal neighbours are tried before giving up, so
    the search can follow a valley that runs across both offsets. It stops
    when no neighbour improves or the evaluation cap is reached. Among
    equal scores the grid point with the smaller total |offset| wins.

    ``base`` supplies material overrides, which are applied to the scene
    before tracing.
    """
    if ref is None or ref.empty:
        raise EmptyObjectiveError("reference has no populated component")
    for lo, hi in (diffraction_range, diffuse_range):
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise ValueError("search ranges must be finite with lo <= hi")
    if not step > 0:
        raise ValueError("step must be positive")
    base = base or CalibrationConfig.identity()
    if raw_results is None:
        traced_scene = swap_materials(scene, base)
        raw_results = run_p2mp(traced_scene, bs, ut_list, radio, budget, None, n_rays,
                               tile_size, workers)
    raw = [r for r in raw_results if r.ok]
    if not raw:
        raise RuntimeError("every UT failed to trace")

    def grid(lo, hi):
        n = int(math.floor((hi - lo) / step + 1e-9))
        return [round(lo + i * step, 9) for i in range(n + 1)]

    axes = (grid(*diffraction_range), grid(*diffuse_range))

    def nearest(axis, v):
        return min(axis, key=lambda a: (abs(a - v), abs(a)))

    cache = {}
    log = []

    def evaluate(point):
        if point not in cache:
            if len(cache) >= max_evals:
                return None
            cfg = dataclasses.replace(base, diffraction_offset_db=point[0],
                                      diffuse_offset_db=point[1], enabled=True)
            cache[point] = objective(recharacterize(raw, cfg, radio), ref, weights)
            log.append((point[0], point[1], cache[point]))
        return cache[point]

    def better(a, sa, b, sb):
        if sa != sb:
            return sa < sb
        return (abs(a[0]) + abs(a[1]), abs(a[0]), abs(a[1])) < (abs(b[0]) + abs(b[1]), abs(b[0]), abs(b[1]))

    cur = (nearest(axes[0], 0.0), nearest(axes[1], 0.0))
    cur_score = evaluate(cur)
    index = (axes[0].index(cur[0]), axes[1].index(cur[1]))
    accepted = [(cur[0], cur[1], cur_score)]
    axis_moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
    diagonal_moves = ((-1, -1), (-1, 1), (1, -1), (1, 1))

    def best_move(moves):
        best, best_score, best_index = None, None, None
        for di, dj in moves:
            idx = (index[0] + di, index[1] + dj)
            if not (0 <= idx[0] < len(axes[0]) and 0 <= idx[1] < len(axes[1])):
                continue
            cand = (axes[0][idx[0]], axes[1][idx[1]])
            s = evaluate(cand)
            if s is None:
                continue
            if best is None or better(cand, s, best, best_score):
                best, best_score, best_index = cand, s, idx
        return best, best_score, best_index

    while True:
        best, best_score, best_index = best_move(axis_moves)
        if best is None or not best_score < cur_score:
            # a diagonal valley can trap pure coordinate steps; try the corners
            best, best_score, best_index = best_move(diagonal_moves)
        if best is None or not best_score < cur_score:
            break
        cur, cur_score, index = best, best_score, best_index
        accepted.append((cur[0], cur[1], cur_score))
    cfg = dataclasses.replace(base, diffraction_offset_db=cur[0], diffuse_offset_db=cur[1],
                              enabled=True)
    return FitResult(cfg, cur_score, len(cache), tuple(log), tuple(accepted))
