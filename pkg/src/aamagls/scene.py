"""Acoustic scenes: plane-wave sets, shoebox image sources, array and ear signals.

A scene is a list of far-field plane waves at the array center, each with
a gain and a delay. Shoebox rooms are turned into scenes with the image
method; every image source becomes one plane wave.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import sh
from .array_encoding import SOUND_SPEED, FrequencyGrid, steering_matrices
from .hrtf import sphere_hrtf_at
from .renderer import BinauralSpectra

__all__ = [
    "GeometryError",
    "PlaneWave",
    "PlaneWaveScene",
    "RoomSpec",
    "NoiseModel",
    "ROOM_PRESETS",
    "room_preset",
    "image_source_scene",
    "mic_spectra",
    "reference_binaural",
    "synthesize_ir",
    "energy_decay_slope",
    "SNAP_TOLERANCE_DEG",
]

SCENE_SCHEMA_VERSION = 1
SNAP_TOLERANCE_DEG = 2.0
# leading samples reserved for slightly non-causal responses (e.g. array
# steering relative to the array center)
PRE_SAMPLES = 64


class GeometryError(ValueError):
    """Invalid room or source/array placement."""


@dataclass(frozen=True)
class PlaneWave:
    direction: sh.Direction
    gain: float
    delay: float


@dataclass
class PlaneWaveScene:
    """Plane waves stored column-wise: ``theta``, ``phi`` (rad), ``gain``, ``delay`` (s)."""

    theta: np.ndarray
    phi: np.ndarray
    gain: np.ndarray
    delay: np.ndarray
    fs: float = 48000.0
    source_audio: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        self.gain = np.atleast_1d(np.asarray(self.gain, dtype=float))
        self.delay = np.atleast_1d(np.asarray(self.delay, dtype=float))
        n = self.theta.size
        if not (self.phi.size == self.gain.size == self.delay.size == n):
            raise ValueError("wave fields must have equal length")
        if not np.all(np.isfinite(self.gain)):
            raise ValueError("wave gains must be finite")
        if np.any(self.delay < 0):
            raise ValueError("wave delays must be >= 0")

    @classmethod
    def from_waves(cls, waves, fs=48000.0, source_audio=None, meta=None):
        waves = list(waves)
        return cls([w.direction.theta for w in waves], [w.direction.phi for w in waves],
                   [w.gain for w in waves], [w.delay for w in waves], fs, source_audio,
                   meta or {})

    @classmethod
    def empty(cls, fs=48000.0):
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), fs)

    def __len__(self):
        return self.theta.size

    @property
    def waves(self):
        return [PlaneWave(sh.Direction(t, p), g, d)
                for t, p, g, d in zip(self.theta, self.phi, self.gain, self.delay)]

    def __add__(self, other):
        return PlaneWaveScene(np.r_[self.theta, other.theta], np.r_[self.phi, other.phi],
                              np.r_[self.gain, other.gain], np.r_[self.delay, other.delay],
                              self.fs, self.source_audio, dict(self.meta))

    def to_dict(self):
        return {
            "schema_version": SCENE_SCHEMA_VERSION,
            "fs": self.fs,
            "source_audio": self.source_audio,
            "meta": self.meta,
            "waves": [{"theta_rad": float(t), "phi_rad": float(p), "gain": float(g),
                       "delay_s": float(d)}
                      for t, p, g, d in zip(self.theta, self.phi, self.gain, self.delay)],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version", SCENE_SCHEMA_VERSION) != SCENE_SCHEMA_VERSION:
            raise ValueError(f"unsupported scene schema {d.get('schema_version')}")
        w = d.get("waves", [])
        col = lambda k: np.array([x[k] for x in w], dtype=float)
        return cls(col("theta_rad"), col("phi_rad"), col("gain"), col("delay_s"),
                   d.get("fs", 48000.0), d.get("source_audio"), d.get("meta", {}))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --- rooms -------------------------------------------------------------------

@dataclass
class RoomSpec:
    """Shoebox room with uniform, frequency-independent wall absorption.

    ``max_image_order`` bounds the image index per axis; ``None`` picks
    the smallest order whose lattice covers the direct delay plus ``rt60``.
    """

    dims: tuple
    source_pos: tuple
    array_pos: tuple
    rt60: float
    max_image_order: int | None = None
    name: str = "custom"

    def __post_init__(self):
        self.dims = tuple(float(x) for x in self.dims)
        self.source_pos = tuple(float(x) for x in self.source_pos)
        self.array_pos = tuple(float(x) for x in self.array_pos)
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise GeometryError("room dims must be three positive lengths")
        for label, p in (("source", self.source_pos), ("array", self.array_pos)):
            if len(p) != 3 or not all(0 < x < L for x, L in zip(p, self.dims)):
                raise GeometryError(f"{label} position {p} not strictly inside the room")
        if not self.rt60 > 0:
            raise GeometryError("rt60 must be > 0")
        if self.max_image_order is not None and self.max_image_order < 0:
            raise GeometryError("max_image_order must be >= 0")

    @property
    def volume(self):
        L, W, H = self.dims
        return L * W * H

    @property
    def surface(self):
        L, W, H = self.dims
        return 2 * (L * W + L * H + W * H)

    def mean_absorption(self):
        """Sabine inversion ``alpha = 0.161 V / (S rt60)``, capped at 1."""
        return min(0.161 * self.volume / (self.surface * self.rt60), 1.0)

    def reflection_coefficient(self):
        return float(np.sqrt(1.0 - self.mean_absorption()))

    def direct_distance(self):
        return float(np.linalg.norm(np.subtract(self.source_pos, self.array_pos)))

    def max_delay(self, sound_speed=SOUND_SPEED):
        return self.direct_distance() / sound_speed + self.rt60

    def resolved_order(self, sound_speed=SOUND_SPEED):
        if self.max_image_order is not None:
            return int(self.max_image_order)
        return int(np.ceil(self.max_delay(sound_speed) * sound_speed / min(self.dims))) + 1

    def to_dict(self):
        return {"name": self.name, "dims": list(self.dims), "source_pos": list(self.source_pos),
                "array_pos": list(self.array_pos), "rt60": self.rt60,
                "max_image_order": self.max_image_order}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dims"], d["source_pos"], d["array_pos"], d["rt60"],
                   d.get("max_image_order"), d.get("name", "custom"))


ROOM_PRESETS = {
    "listening_room": dict(dims=(8.0, 6.0, 4.0), source_pos=(4.0, 3.0, 1.7),
                       array_pos=(2.6, 4.4, 1.7), rt60=0.4),
    "listening_room_anechoic": dict(dims=(8.0, 6.0, 4.0), source_pos=(4.0, 3.0, 1.7),
                                array_pos=(2.6, 4.4, 1.7), rt60=0.4, max_image_order=0),
}


def room_preset(name):
    try:
        return RoomSpec(**ROOM_PRESETS[name], name=name)
    except KeyError:
        raise KeyError(f"unknown room preset {name!r}; choose from {sorted(ROOM_PRESETS)}")


def _image_axis(j, length, src):
    # image index j along one axis: |j| wall reflections
    return np.where(j % 2 == 0, j * length + src, (j + 1) * length - src)


def image_source_scene(room, sound_speed=SOUND_SPEED, array_yaw=0.0, max_delay=None,
                       fs=48000.0):
    """Plane-wave scene of all image sources with per-axis index ``|j| <= K``.

    Directions are expressed in the array frame, which is the room frame
    turned by ``array_yaw`` about z. Waves later than ``max_delay``
    (default: direct delay + rt60 when the order is automatic) or with zero
    gain are dropped.
    """
    src = np.asarray(room.source_pos)
    arr = np.asarray(room.array_pos)
    if np.linalg.norm(src - arr) < 1e-6:
        raise GeometryError("source coincides with the array")
    K = room.resolved_order(sound_speed)
    if max_delay is None and room.max_image_order is None:
        max_delay = room.max_delay(sound_speed)
    j = np.arange(-K, K + 1)
    axes = [_image_axis(j, L, s) for L, s in zip(room.dims, src)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    refl = (np.abs(j)[:, None, None] + np.abs(j)[None, :, None] + np.abs(j)[None, None, :])
    rel = np.stack([X.ravel() - arr[0], Y.ravel() - arr[1], Z.ravel() - arr[2]])
    dist = np.linalg.norm(rel, axis=0)
    beta = room.reflection_coefficient()
    with np.errstate(divide="ignore"):
        gain = np.power(beta, refl.ravel().astype(float)) / dist
    delay = dist / sound_speed
    keep = gain > 0
    if max_delay is not None:
        keep &= delay <= max_delay
    order = np.argsort(delay[keep], kind="stable")
    rel = rel[:, keep][:, order]
    c, s = np.cos(-array_yaw), np.sin(-array_yaw)
    rel = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]) @ rel
    theta, phi, _ = sh.cart2sph(*rel)
    meta = {"room": room.to_dict(), "image_order": K, "array_yaw_rad": float(array_yaw),
            "reflection_coefficient": beta, "sound_speed": sound_speed}
    return PlaneWaveScene(theta, phi, gain[keep][order], delay[keep][order], fs, None, meta)


def energy_decay_slope(scene, t0=0.05, t1=0.3, window=0.01):
    """Decay slope (dB/s) of the omnidirectional image-source energy envelope.

    Squared gains are binned into ``window``-long frames and a line is
    fitted to their dB values between ``t0`` and ``t1``.
    """
    edges = np.arange(0.0, t1 + window, window)
    e, _ = np.histogram(scene.delay, bins=edges, weights=scene.gain ** 2)
    mid = edges[:-1] + window / 2
    sel = (mid > t0) & (mid < t1) & (e > 0)
    if sel.sum() < 2:
        raise ValueError("not enough reflections in the fit window")
    return float(np.polyfit(mid[sel], 10 * np.log10(e[sel]), 1)[0])


# --- signals -----------------------------------------------------------------

@dataclass
class NoiseModel:
    """I.i.d. circular complex Gaussian sensor noise with variance ``variance``."""

    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("noise variance must be >= 0")

    def draw(self, shape):
        if self.variance == 0:
            return np.zeros(shape, dtype=complex)
        rng = np.random.default_rng(self.seed)
        re = rng.standard_normal(shape)
        im = rng.standard_normal(shape)
        return np.sqrt(self.variance / 2) * (re + 1j * im)


def _wave_spectra(scene, freqs, spectrum):
    s = scene.gain[None, :] * np.exp(-2j * np.pi * freqs[:, None] * scene.delay[None, :])
    if spectrum is not None:
        s = s * np.asarray(spectrum)[:, None]
    return s


def _chunks(n, size):
    for i in range(0, n, size):
        yield slice(i, min(i + size, n))


def mic_spectra(scene, geom, freqs, noise=None, spectrum=None, sound_speed=SOUND_SPEED,
                chunk=1024):
    """Array signals ``x(k) = V(k) s(k) + n(k)``, shape (B, M).

    ``freqs`` is a :class:`FrequencyGrid` or an array of frequencies;
    ``spectrum`` is the source spectrum S(k) (ones when omitted).
    """
    f = freqs.freqs if isinstance(freqs, FrequencyGrid) else np.asarray(freqs, dtype=float)
    x = np.zeros((f.size, geom.M), dtype=complex)
    for sl in _chunks(len(scene), chunk):
        g = sh.DirectionGrid(scene.theta[sl], scene.phi[sl])
        V = steering_matrices(geom, g, f, sound_speed)
        sub = PlaneWaveScene(scene.theta[sl], scene.phi[sl], scene.gain[sl], scene.delay[sl])
        x += np.einsum("bmq,bq->bm", V, _wave_spectra(sub, f, spectrum))
    if noise is not None:
        x = x + noise.draw(x.shape)
    return x


def _hrtf_at_waves(hrtf, theta, phi):
    """HRTF rows for the wave directions plus snapping diagnostics."""
    src = hrtf.source
    if src.get("kind") == "analytic_sphere" and not src.get("rotated"):
        f = hrtf.freqs.freqs
        out = [sphere_hrtf_at(theta, phi, f, src["head_radius"], e, src["delay"],
                              src["sound_speed"]) for e in src["ear_dirs"]]
        return out[0], out[1], np.zeros(theta.size)
    u = sh.sph2cart(theta, phi)
    cosang = np.clip(hrtf.grid.unit_vectors().T @ u, -1.0, 1.0)
    idx = np.argmax(cosang, axis=0)
    ang = np.arccos(cosang[idx, np.arange(theta.size)])
    return hrtf.left[idx], hrtf.right[idx], ang


def reference_binaural(scene, hrtf, spectrum=None):
    """Ear spectra ``p(k) = h(k)^T s(k)`` on the HRTF frequency grid.

    Analytic sphere sets are evaluated at the exact wave directions; for
    tabulated sets each direction is snapped to its nearest grid point and
    snaps farther than 2 degrees are counted in ``meta`` with a warning.
    """
    f = hrtf.freqs.freqs
    left = np.zeros(f.size, dtype=complex)
    right = np.zeros(f.size, dtype=complex)
    worst, n_far = 0.0, 0
    for sl in _chunks(len(scene), 2048):
        hl, hr, ang = _hrtf_at_waves(hrtf, scene.theta[sl], scene.phi[sl])
        sub = PlaneWaveScene(scene.theta[sl], scene.phi[sl], scene.gain[sl], scene.delay[sl])
        s = _wave_spectra(sub, f, spectrum)
        left += np.einsum("qb,bq->b", hl, s)
        right += np.einsum("qb,bq->b", hr, s)
        if ang.size:
            worst = max(worst, float(np.rad2deg(ang.max())))
        n_far += int(np.sum(np.rad2deg(ang) > SNAP_TOLERANCE_DEG))
    meta = {"max_snap_deg": worst, "snapped_beyond_tolerance": n_far}
    if n_far:
        warnings.warn(f"{n_far} scene directions are more than {SNAP_TOLERANCE_DEG} deg "
                      f"from the HRTF grid (max {worst:.2f} deg)")
    return BinauralSpectra(left, right, hrtf.freqs.sample_rate, hrtf.freqs.nfft, meta)


def synthesize_ir(scene, responder, n_out, freqs, chunk=1024, pre=PRE_SAMPLES):
    """Multichannel impulse response of a scene through a direction-dependent system.

    ``responder(theta, phi)`` returns spectra (n, n_out, B) on ``freqs``
    (a :class:`FrequencyGrid`). Each wave adds its response, delayed by
    its (fractional) delay and scaled by its gain. Responses may start up
    to ``pre`` samples before the wave delay. The output has shape
    (T, n_out) with sample 0 at time zero.
    """
    fs, nfft = freqs.sample_rate, freqs.nfft
    f = freqs.freqs
    if len(scene) == 0:
        return np.zeros((nfft, n_out))
    total = scene.delay * fs
    whole = np.floor(total).astype(np.int64)
    frac = total - whole
    length = int(whole.max()) + nfft
    out = np.zeros((n_out, length))
    taps = np.arange(nfft)
    for sl in _chunks(len(scene), chunk):
        F = responder(scene.theta[sl], scene.phi[sl])
        shift = np.exp(-2j * np.pi * f[None, :] * (frac[sl, None] + pre) / fs)
        F = F * (scene.gain[sl, None] * shift)[:, None, :]
        irs = np.fft.irfft(F, n=nfft, axis=-1)
        idx = (whole[sl, None] + taps[None, :]).ravel()
        for c in range(n_out):
            out[c] += np.bincount(idx, weights=irs[:, c, :].ravel(), minlength=length)
    return out[:, pre:].T
