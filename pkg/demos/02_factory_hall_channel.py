"""Trace the synthetic factory hall and compare line-of-sight and shadowed receivers.

Run with ``python3 demos/02_factory_hall_channel.py`` (under a minute).
"""
import statistics

from ifray.channel import run_p2mp
from ifray.geometry import build_paper_scene, clutter_density, paper_positions
from ifray.tracer import InteractionBudget

scene = build_paper_scene(seed=1)
bs, uts = paper_positions()
print(f"hall {scene.hall.length} x {scene.hall.width} x {scene.hall.height} m, "
      f"{len(scene.objects)} objects, clutter density {100 * clutter_density(scene):.2f} %")

# Every fourth receiver keeps the run short while covering both rows.
picked = list(uts[::4])
budget = InteractionBudget(2, 1, 1, diffuse_enabled=True)
results = run_p2mp(scene, bs, picked, budget=budget, n_rays=50_000)

print(f"\n{'UT':>3} {'class':>5} {'dist m':>7} {'power dBm':>10} {'DS ns':>7} {'MPCs':>6}")
for r in results:
    dist = sum((a - b) ** 2 for a, b in zip(r.position, bs)) ** 0.5
    p = r.params
    print(f"{4 * r.index + 1:>3} {r.los_class:>5} {dist:7.1f} {p.total_power_dbm:10.1f} "
          f"{p.rms_ds * 1e9:7.1f} {len(r.mpcs):6d}")

for cls in ("LoS", "NLoS"):
    ds = [r.params.rms_ds * 1e9 for r in results if r.los_class == cls]
    print(f"median RMS delay spread, {cls}: {statistics.median(ds):.1f} ns over {len(ds)} UTs")
