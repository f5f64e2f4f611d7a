"""Render a short noise burst in a shoebox room through every pipeline.

The room is simulated with image sources, captured by the glasses array (or
by ideal Ambisonics for the reference pipelines) and rendered binaurally.
All stimuli share one normalization gain so their levels stay comparable.
WAV files go to ./demo_out/ (or the first argument).

Run:  python demos/03_render_a_room.py [out_dir]   (about 1 min)
"""

import os
import sys

import numpy as np

from aamagls import array_encoding as ae
from aamagls import hrtf, pipelines, renderer, scene, sh

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
os.makedirs(out, exist_ok=True)

grid = sh.lebedev_grid(2702)
freqs = ae.FrequencyGrid(48000.0, 1024)
d = pipelines.design(hrtf.analytic_sphere_hrtf(grid, freqs),
                     ae.default_wearable_geometry(), order=1)

room = scene.room_preset("listening_room")
waves = scene.image_source_scene(room, fs=freqs.sample_rate)
first = int(np.argmin(waves.delay))
print(f"{len(waves)} plane waves; direct path from "
      f"{np.rad2deg(waves.phi[first]):.1f} deg azimuth after {waves.delay[first] * 1e3:.2f} ms")

rng = np.random.default_rng(1)
burst = rng.standard_normal(int(0.3 * freqs.sample_rate)) * np.hanning(int(0.3 * freqs.sample_rate))
stimuli, gain = pipelines.listening_test_stimuli(d, room, burst)
for name, audio in sorted(stimuli.items()):
    path = os.path.join(out, f"{name}.wav")
    renderer.write_wav(path, audio.samples, audio.fs)
    rms = np.sqrt(np.mean(audio.samples ** 2, axis=0))
    print(f"  {name:<24} L {20 * np.log10(rms[0]):6.1f} dBFS  R {20 * np.log10(rms[1]):6.1f} dBFS")
print(f"batch gain {gain:.3g}; files in {out}/")
