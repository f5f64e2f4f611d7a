"""Binaural reproduction methods assembled from the library pieces.

Each method maps a plane wave to a pair of ear transfer functions:

``hoa_hrtf``     ideal order-30 Ambisonics with the LS (regular) HRTF
``foa_hrtf``     ideal first-order Ambisonics with the LS HRTF
``foa_magls``    ideal first-order Ambisonics with the MagLS HRTF
``asm_magls``    array signals, ASM encoder, MagLS HRTF
``asm_aamagls``  array signals, ASM encoder, array-aware MagLS HRTF

Rotations are ``(delta_phi, delta_theta)`` in radians and follow
:func:`renderer.rotate`: the HRTF coefficients are multiplied by the
Wigner-D matrix, i.e. the listener's head is turned by that rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import sh
from .array_encoding import (DEFAULT_SNR_RATIO, ArrayGeometry, EncodingFilter, asm_filter,
                             steering_matrices)
from .hrtf import (CrossfadeSpec, HrtfSet, HrtfSh, aa_magls_encode, crossfade_combine,
                   ls_encode, magls_encode, sphere_hrtf_at)
from .renderer import StereoAudio
from .scene import PlaneWaveScene, image_source_scene, synthesize_ir

__all__ = [
    "METHODS",
    "ASM_METHODS",
    "HOA_ORDER",
    "Design",
    "design",
    "method_responder",
    "reference_responder",
    "mic_responder",
    "hrir_pairs",
    "sweep_callable",
    "render_scene",
    "listening_test_stimuli",
    "scene_from_plane_wave",
]

METHODS = ("hoa_hrtf", "foa_hrtf", "foa_magls", "asm_magls", "asm_aamagls")
ASM_METHODS = ("asm_magls", "asm_aamagls")
HOA_ORDER = 30


def _rot_key(rotation):
    return (round(float(rotation[0]), 12), round(float(rotation[1]), 12))


@dataclass
class Design:
    """All HRTF representations and the encoder needed by the method roster."""

    hrtf: HrtfSet
    geometry: ArrayGeometry
    filt: EncodingFilter
    V: np.ndarray
    ls_hoa: HrtfSh
    ls: HrtfSh
    magls: HrtfSh
    fade: CrossfadeSpec
    aa_options: dict = field(default_factory=dict)
    aa: dict = field(default_factory=dict)
    magls_raw: HrtfSh | None = None
    aa_raw: dict = field(default_factory=dict)

    @property
    def order(self):
        return self.filt.order

    def aa_magls(self, rotation=(0.0, 0.0)):
        """Crossfaded AA-MagLS HRTF designed for ``rotation`` (cached)."""
        key = _rot_key(rotation)
        if key not in self.aa:
            rot = None if key == (0.0, 0.0) else key
            raw = aa_magls_encode(self.hrtf, self.filt, self.V, self.fade, rotation=rot,
                                  **self.aa_options)
            self.aa_raw[key] = raw
            self.aa[key] = crossfade_combine(self.ls, raw, self.fade)
        return self.aa[key]

    def hrtf_for(self, method, rotation=(0.0, 0.0)):
        if method == "hoa_hrtf":
            return self.ls_hoa
        if method == "foa_hrtf":
            return self.ls_hoa.truncated(1)
        if method == "foa_magls":
            if self.order == 1:
                return self.magls
            return _crossfaded_magls(self.hrtf, 1, self.fade, self.aa_options.get("phase_init"))
        if method == "asm_magls":
            return self.magls
        if method == "asm_aamagls":
            return self.aa_magls(rotation)
        raise KeyError(f"unknown method {method!r}; choose from {METHODS}")


def _crossfaded_magls(h, order, fade, phase_init="carry"):
    raw = magls_encode(h, order, fade, phase_init=phase_init or "carry")
    return crossfade_combine(ls_encode(h, order), raw, fade)


def design(hrtf, geometry, order=1, snr_ratio=DEFAULT_SNR_RATIO, fade=None, rotations=(),
           hoa_order=HOA_ORDER, aa_options=None, V=None, phase_init="carry"):
    """Build the encoder and every HRTF variant; AA-MagLS is designed per rotation.

    ``phase_init`` is passed to both magnitude fits; ``aa_options`` holds
    any further keyword arguments for :func:`hrtf.aa_magls_encode`.
    """
    fade = fade or CrossfadeSpec()
    fade.validate(hrtf.freqs.sample_rate / 2)
    f = hrtf.freqs.freqs
    if V is None:
        V = steering_matrices(geometry, hrtf.grid, f)
    filt = asm_filter(V, hrtf.grid, order, snr_ratio, freqs=f)
    filt.sample_rate = hrtf.freqs.sample_rate
    filt.nfft = hrtf.freqs.nfft
    max_order = sh.max_exact_order(hrtf.grid)
    ls_hoa = ls_encode(hrtf, min(hoa_order, max_order) if max_order else hoa_order)
    ls = ls_encode(hrtf, order)
    magls_raw = magls_encode(hrtf, order, fade, phase_init=phase_init)
    magls = crossfade_combine(ls, magls_raw, fade)
    opts = {"phase_init": phase_init, **(aa_options or {})}
    d = Design(hrtf, geometry, filt, V, ls_hoa, ls, magls, fade, opts, magls_raw=magls_raw)
    for r in rotations:
        d.aa_magls(r)
    return d


# --- plane-wave responders ----------------------------------------------------

def _coeffs(h_nm, rotation):
    D = sh.wigner_d(rotation[0], rotation[1], h_nm.order).matrix
    return D @ h_nm.left, D @ h_nm.right


def method_responder(d, method, rotation=(0.0, 0.0)):
    """``responder(theta, phi) -> (n, 2, B)`` ear spectra of ``method`` per plane wave."""
    h_nm = d.hrtf_for(method, rotation)
    hl, hr = _coeffs(h_nm, rotation)
    f = d.hrtf.freqs.freqs
    if method in ASM_METHODS:
        Ct = d.filt.tilde_form().coeffs[:, :, :h_nm.left.shape[0]]
        # per-microphone binaural filters (B, M) per ear
        G = [np.einsum("kb,bmk->bm", h, Ct.conj()) for h in (hl, hr)]

        def respond(theta, phi):
            V = steering_matrices(d.geometry, sh.DirectionGrid(theta, phi), f)
            return np.stack([np.einsum("bmq,bm->qb", V, g) for g in G], axis=1)
        return respond

    def respond(theta, phi):
        Y = sh.sh_matrix(sh.DirectionGrid(theta, phi), h_nm.order)
        return np.stack([Y @ hl, Y @ hr], axis=1)
    return respond


def reference_responder(hrtf, rotation=(0.0, 0.0), order=HOA_ORDER):
    """Reference ear spectra for a head turned by ``rotation`` (world-locked source).

    Analytic sphere sets are evaluated exactly with rotated ears; tabulated
    sets are interpolated at arbitrary directions through an order-``order``
    LS encoding.
    """
    f = hrtf.freqs.freqs
    src = hrtf.source
    if src.get("kind") == "analytic_sphere":
        R = sh.rotation_matrix_zyz(rotation[0], rotation[1])
        ears = []
        for th, ph in src["ear_dirs"]:
            t, p, _ = sh.cart2sph(*(R @ sh.sph2cart(th, ph)))
            ears.append((float(t), float(p)))

        def respond(theta, phi):
            return np.stack([sphere_hrtf_at(theta, phi, f, src["head_radius"], e, src["delay"],
                                            src["sound_speed"]) for e in ears], axis=1)
        return respond
    max_order = sh.max_exact_order(hrtf.grid)
    h_nm = ls_encode(hrtf, min(order, max_order) if max_order else order)
    hl, hr = _coeffs(h_nm, rotation)

    def respond(theta, phi):
        Y = sh.sh_matrix(sh.DirectionGrid(theta, phi), h_nm.order)
        return np.stack([Y @ hl, Y @ hr], axis=1)
    return respond


def mic_responder(geometry, freqs):
    """Array responses (n, M, B) per plane wave."""
    f = freqs.freqs

    def respond(theta, phi):
        return np.transpose(steering_matrices(geometry, sh.DirectionGrid(theta, phi), f),
                            (2, 1, 0))
    return respond


def hrir_pairs(responder, theta, phi, nfft):
    """Left and right impulse responses, each (n, nfft)."""
    F = responder(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
    irs = np.fft.irfft(F, n=nfft, axis=-1)
    return irs[:, 0, :], irs[:, 1, :]


def sweep_callable(responder, nfft):
    """Adapter for :func:`evaluation.lateralization_sweep`."""
    return lambda theta, phi: hrir_pairs(responder, theta, phi, nfft)


# --- audio rendering ----------------------------------------------------------

def render_scene(responder, scene, freqs, source=None):
    """Binaural room impulse response of ``scene`` (T, 2), or the source convolved with it."""
    ir = synthesize_ir(scene, responder, 2, freqs)
    if source is None:
        return ir
    source = np.asarray(source, dtype=float)
    return np.stack([signal.oaconvolve(source, ir[:, c]) for c in range(2)], axis=1)


def listening_test_stimuli(d, room, source, head_rotation_deg=60.0):
    """The seven listening-test stimuli as one peak-normalized batch.

    Condition 1: all five methods, array facing +x. Condition 2: the array
    turned clockwise by ``head_rotation_deg`` during capture and the HRTF
    turned back by the same angle, for the two ASM methods only.
    Returns ``({name: StereoAudio}, batch_gain)``.
    """
    freqs = d.hrtf.freqs
    fs = freqs.sample_rate
    rot = np.deg2rad(head_rotation_deg)
    scene0 = image_source_scene(room, fs=fs)
    scene1 = image_source_scene(room, array_yaw=-rot, fs=fs)
    raw = {}
    for m in METHODS:
        raw[f"{m}_rot0"] = render_scene(method_responder(d, m), scene0, freqs, source)
    for m in ASM_METHODS:
        key = f"{m}_rot{head_rotation_deg:g}"
        raw[key] = render_scene(method_responder(d, m, (rot, 0.0)), scene1, freqs, source)
    peak = max(float(np.max(np.abs(x))) for x in raw.values())
    gain = 0.99 / peak if peak > 0 else 1.0
    out = {k: StereoAudio(v * gain, fs, False, gain) for k, v in raw.items()}
    return out, gain


def scene_from_plane_wave(theta, phi, fs=48000.0):
    """Single unit plane wave with zero delay."""
    return PlaneWaveScene([theta], [phi], [1.0], [0.0], fs)

