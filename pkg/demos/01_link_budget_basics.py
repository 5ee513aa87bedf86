"""Single-link basics: the free-space anchor, one wall bounce and a knife edge.

Run with ``python3 demos/01_link_budget_basics.py``.
"""
import math

from ifray.em import (Polarization, RadioConfig, complex_permittivity, fresnel_slab, friis_gain,
                      utd_diffraction)
from ifray.geometry import Hall, Scene
from ifray.tracer import InteractionBudget, assemble_mpcs, trace

# A 6.1 m line-of-sight hop is the reference every other number is compared with.
for f in (3.7e9, 28e9):
    print(f"free space, 6.1 m at {f / 1e9:4.1f} GHz: {10 * math.log10(friis_gain(f, 6.1)):7.2f} dB")

# Put the same link in an empty concrete room and let it bounce once.
scene = Scene(Hall(10.0, 8.0, 3.0))
tx, rx = (2.0, 4.0, 1.85), (8.0, 4.5, 1.44)
mpcs = assemble_mpcs(trace(scene, tx, rx, InteractionBudget(1, 0, 0), 50_000), scene, RadioConfig())
print("\nempty 10 x 8 x 3 m room, first-order paths")
for m in sorted(mpcs, key=lambda m: m.delay):
    print(f"  {m.signature:>4}  {m.delay * 1e9:6.2f} ns  {m.power_dbm:7.2f} dBm")

# How much a 25 cm concrete wall reflects and lets through as the angle opens up.
eps = complex_permittivity(scene.materials["concrete"], 3.7e9)
print(f"\nconcrete slab at 3.7 GHz (eps = {eps:.2f})")
for deg in (0, 30, 60, 80):
    r, t = fresnel_slab(eps, math.radians(deg), Polarization.TE, 3.7e9, 0.25)
    print(f"  {deg:2d} deg  |R| {20 * math.log10(abs(r)):6.2f} dB   |T| {20 * math.log10(abs(t)):7.2f} dB")

# A receiver sliding into the shadow of a metal edge: 6 dB down on the boundary, then a fast fade.
print("\nbehind a metal half-plane at 28 GHz, 10 m from the edge")
for deg in (0.0, 1.0, 5.0, 20.0):
    phi = 1.5 * math.pi + math.radians(deg)
    d = utd_diffraction(2.0, 10.0, 10.0, math.pi / 2, phi, math.pi / 2, 28e9, Polarization.TE)
    direct = 20.0 * math.cos(math.radians(deg) / 2)  # tx-rx distance, both 10 m from the edge
    print(f"  {deg:4.1f} deg into shadow: {20 * math.log10(abs(d) * direct / 10.0):6.1f} dB vs free space")
