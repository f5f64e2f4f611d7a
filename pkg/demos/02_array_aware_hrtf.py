"""Compare MagLS and array-aware MagLS on the glasses array.

Both produce first-order HRTF coefficients. MagLS fits the HRTF magnitude
assuming perfect Ambisonics input; AA-MagLS fits the magnitude of the whole
chain (array -> ASM encoder -> HRTF). We print the binaural error per band.
A rotated head is included because AA-MagLS is designed per orientation.

Run:  python demos/02_array_aware_hrtf.py   (about 20 s)
"""

import numpy as np

from aamagls import array_encoding as ae
from aamagls import evaluation as ev
from aamagls import hrtf, pipelines, sh

grid = sh.lebedev_grid(2702)
freqs = ae.FrequencyGrid(48000.0, 1024)
head = hrtf.analytic_sphere_hrtf(grid, freqs)
geometry = ae.default_wearable_geometry()
d = pipelines.design(head, geometry, order=1)

bands = [(0, 1300), (1300, 4000), (4000, 8000), (8000, 16000), (16000, 24000)]
f = freqs.freqs
for deg in (0, 60):
    rot = (np.deg2rad(deg), 0.0)
    h_rot = head.rotated(*rot)
    rows = {}
    for name, coeffs in (("MagLS", d.magls), ("AA-MagLS", d.aa_magls(rot))):
        be = ev.binaural_errors(coeffs, d.filt, d.V, head, rot, d.fade, h_rot)
        eps = 0.5 * (be.eps_comb["left"] + be.eps_comb["right"])
        rows[name] = [10 * np.log10(np.mean(eps[(f >= lo) & (f < hi)])) for lo, hi in bands]
    print(f"\nhead yaw {deg} deg, binaural error in dB (lower is better)")
    print("  band [kHz]    " + "  ".join(f"{lo/1e3:4.1f}-{hi/1e3:<4.1f}" for lo, hi in bands))
    for name, vals in rows.items():
        print(f"  {name:<12}" + "  ".join(f"{v:9.2f}" for v in vals))
