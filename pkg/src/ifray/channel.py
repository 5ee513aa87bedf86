"""Large-scale channel parameters from multipath components.

Power delay profiles, RMS delay spread, azimuth AoA spectra, empirical
CDFs, coverage grids and the point-to-multipoint driver.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .em import RadioConfig
from .geometry import UT_HEIGHT, classify_visibility
from .tracer import (DEFAULT_RAYS, DEFAULT_TILE, InteractionBudget, assemble_mpcs, ray_bundle,
                     sort_mpcs, trace)


def _lin(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def _db(lin):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(lin)


def _retained(mpcs, noise_floor_dbm):
    return [m for m in mpcs if m.power_dbm >= noise_floor_dbm]


@dataclass(frozen=True)
class PowerDelayProfile:
    """Bandwidth-binned PDP; ``bins`` holds (bin centre delay s, power dBm)."""

    bin_width: float
    bins: tuple
    noise_floor: float

    @property
    def delays(self):
        return np.array([b[0] for b in self.bins])

    @property
    def powers_dbm(self):
        return np.array([b[1] for b in self.bins])


@dataclass(frozen=True)
class LargeScaleParams:
    total_power_dbm: float
    rms_ds: float
    aoa_spectrum: tuple
    los_class: str


def compute_pdp(mpcs, radio=RadioConfig()):
    """Sum MPC powers in delay bins of width ``1 / bandwidth``."""
    width = 1.0 / radio.bandwidth
    kept = _retained(mpcs, radio.noise_floor_dbm)
    acc = {}
    for m in kept:
        k = int(math.floor(m.delay / width))
        acc[k] = acc.get(k, 0.0) + 10.0 ** (m.power_dbm / 10.0)
    bins = tuple(((k + 0.5) * width, float(_db(p))) for k, p in sorted(acc.items())
                 if _db(p) >= radio.noise_floor_dbm)
    return PowerDelayProfile(width, bins, radio.noise_floor_dbm)


def rms_delay_spread(mpcs, noise_floor=-145.0, rel_threshold_db=None):
    """Second central moment of the power-weighted delays (s)."""
    kept = _retained(mpcs, noise_floor)
    if kept and rel_threshold_db is not None:
        peak = max(m.power_dbm for m in kept)
        kept = [m for m in kept if m.power_dbm >= peak - rel_threshold_db]
    if not kept:
        raise ValueError("no multipath component above the threshold")
    tau = np.array([m.delay for m in kept])
    p = _lin([m.power_dbm for m in kept])
    # shift by the first arrival so the moments stay well conditioned
    tau = tau - tau.min()
    mean = np.sum(p * tau) / np.sum(p)
    var = np.sum(p * tau * tau) / np.sum(p) - mean * mean
    return float(math.sqrt(max(var, 0.0)))


def aoa_spectrum(mpcs, bin_deg=5.0, noise_floor=-145.0):
    """Azimuth AoA power spectrum as (bin start deg, power dBm); empty bins are -inf."""
    n_bins = 360.0 / bin_deg
    if bin_deg <= 0 or abs(n_bins - round(n_bins)) > 1e-9:
        raise ValueError("bin width must divide 360 evenly")
    n_bins = int(round(n_bins))
    acc = np.zeros(n_bins)
    for m in _retained(mpcs, noise_floor):
        # round away radian/degree conversion noise before binning
        az = round(math.degrees(m.aoa[0]) % 360.0, 9) % 360.0
        k = min(int(az // bin_deg), n_bins - 1)
        acc[k] += 10.0 ** (m.power_dbm / 10.0)
    return tuple((float(k * bin_deg), float(_db(acc[k]))) for k in range(n_bins))


def empirical_cdf(values):
    """Empirical CDF steps (value, rank / n), one step per distinct value."""
    vals = np.sort(np.asarray(values, dtype=float), kind="stable")
    if vals.size == 0:
        raise ValueError("empirical CDF of an empty sample")
    n = vals.size
    out = []
    for i, v in enumerate(vals):
        p = (i + 1) / n
        if out and out[-1][0] == v:
            out[-1] = (float(v), p)
        else:
            out.append((float(v), p))
    return out


def cdf_quantile(cdf, p):
    """Linear interpolation of a CDF step list at probability ``p``."""
    vals = np.array([c[0] for c in cdf])
    probs = np.array([c[1] for c in cdf])
    return float(np.interp(p, probs, vals))


def large_scale_params(mpcs, radio=RadioConfig(), los_class="LoS", bin_deg=5.0):
    kept = _retained(mpcs, radio.noise_floor_dbm)
    total = float(_db(sum(10.0 ** (m.power_dbm / 10.0) for m in kept))) if kept else -math.inf
    ds = rms_delay_spread(kept, radio.noise_floor_dbm) if kept else math.nan
    return LargeScaleParams(total, ds, aoa_spectrum(kept, bin_deg, radio.noise_floor_dbm), los_class)


# -- point to multipoint -------------------------------------------------------------

@dataclass
class UTResult:
    index: int
    position: tuple
    los_class: str
    mpcs: list = field(default_factory=list)
    params: LargeScaleParams | None = None
    pdp: PowerDelayProfile | None = None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


def worker_count(workers=None):
    """Explicit count, else ``IFRAY_THREADS``, else the CPU count."""
    if workers is None:
        env = os.environ.get("IFRAY_THREADS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def trace_mpcs(scene, bs, ut, radio, budget, calib=None, n_rays=DEFAULT_RAYS,
               tile_size=DEFAULT_TILE):
    paths = trace(scene, bs, ut, budget, n_rays, tile_size)
    return sort_mpcs(assemble_mpcs(paths, scene, radio, calib))


def run_p2mp(scene, bs, ut_list, radio=RadioConfig(), budget=InteractionBudget(), calib=None,
             n_rays=DEFAULT_RAYS, tile_size=DEFAULT_TILE, workers=None, bin_deg=5.0):
    """Trace and characterize every UT; results come back in input order.

    A failing UT is reported through ``UTResult.error`` without stopping
    the batch.
    """
    uts = [tuple(float(c) for c in u) for u in ut_list]
    if not uts:
        return []
    bs = np.asarray(bs, dtype=float)
    try:
        # the shared transmitter bundle is built once before fanning out
        ray_bundle(scene, bs, n_rays, budget)
    except Exception:  # noqa: BLE001 - surfaced per UT below
        pass

    def one(item):
        i, ut = item
        try:
            los = classify_visibility(scene, bs, ut).value
        except Exception as exc:  # noqa: BLE001
            return UTResult(i, ut, "?", error=f"{type(exc).__name__}: {exc}")
        try:
            mpcs = trace_mpcs(scene, bs, ut, radio, budget, calib, n_rays, tile_size)
            return UTResult(i, ut, los, mpcs, large_scale_params(mpcs, radio, los, bin_deg),
                            compute_pdp(mpcs, radio))
        except Exception as exc:  # noqa: BLE001
            return UTResult(i, ut, los, error=f"{type(exc).__name__}: {exc}")

    items = list(enumerate(uts))
    n = worker_count(workers)
    if n == 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, items))


# -- coverage ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageMap:
    xs: np.ndarray
    ys: np.ndarray
    power_dbm: np.ndarray  # (nx, ny); nan = below floor or inside an object
    blocked: np.ndarray  # (nx, ny) cells whose centre lies inside an object
    noise_floor: float

    @property
    def shape(self):
        return self.power_dbm.shape

    def cells(self):
        for i, x in enumerate(self.xs):
            for j, y in enumerate(self.ys):
                yield float(x), float(y), float(self.power_dbm[i, j])


def grid_axis(extent, resolution):
    """Cell centres ``(i + 1/2) * res`` for the whole cells fitting in ``extent``."""
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    n = max(1, int(math.floor(extent / resolution + 1e-9)))
    return (np.arange(n) + 0.5) * resolution


def coverage_map(scene, bs, radio=RadioConfig(), budget=InteractionBudget(), resolution=2.0,
                 calib=None, n_rays=DEFAULT_RAYS, ut_height=UT_HEIGHT, tile_size=DEFAULT_TILE,
                 workers=None):
    """Total received power on a regular grid at ``ut_height``."""
    xs = grid_axis(scene.hall.length, resolution)
    ys = grid_axis(scene.hall.width, resolution)
    cells = [(x, y, ut_height) for x in xs for y in ys]
    blocked = np.array([scene.inside_object(c) or np.allclose(c, bs) for c in cells])
    todo = [c for c, b in zip(cells, blocked) if not b]
    results = run_p2mp(scene, bs, todo, radio, budget, calib, n_rays, tile_size, workers)
    power = np.full(len(cells), np.nan)
    it = iter(results)
    for k, b in enumerate(blocked):
        if b:
            continue
        r = next(it)
        if r.ok and r.params is not None and math.isfinite(r.params.total_power_dbm):
            power[k] = r.params.total_power_dbm
    shape = (len(xs), len(ys))
    return CoverageMap(xs, ys, power.reshape(shape), blocked.reshape(shape), radio.noise_floor_dbm)


# -- file formats -----------------------------------------------------------------------

def _fmt(v):
    return f"{v:.6f}" if math.isfinite(v) else ("-inf" if v < 0 else "nan")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def write_pdp_csv(path, pdp):
    write_csv(path, ["delay_ns", "power_dbm"], [(d * 1e9, p) for d, p in pdp.bins])


def write_aoa_csv(path, spectrum):
    write_csv(path, ["az_deg", "power_dbm"], [(float(a), p) for a, p in spectrum])


def write_cdf_csv(path, cdf_seconds):
    write_csv(path, ["ds_ns", "probability"], [(v * 1e9, p) for v, p in cdf_seconds])


def write_coverage_csv(path, cov):
    write_csv(path, ["x_m", "y_m", "power_dbm"], list(cov.cells()))


def write_pgm(path, cov, lo_db=-120.0, hi_db=-40.0):
    """8-bit grayscale render; rows run from the far wall (max y) down."""
    if not hi_db > lo_db:
        raise ValueError("upper dB bound must exceed the lower one")
    p = cov.power_dbm.T[::-1]
    scaled = np.clip((p - lo_db) / (hi_db - lo_db), 0.0, 1.0)
    img = np.where(np.isnan(p), 0, np.round(scaled * 254 + 1)).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())
