"""Binaural rendering from SH-domain HRTFs and Ambisonics signals.

Rendering is ``p(k) = h_nm(k)^T a~_nm(k)`` per bin, where ``a~`` is the
tilde-reindexed Ambisonics vector. The tilde state is carried on
:class:`ShSignal` so reindexing is never applied twice or forgotten.
"""

from __future__ import annotations

import warnings
import wave
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.io import wavfile

from . import sh

__all__ = [
    "ShSignal",
    "BinauralSpectra",
    "StereoAudio",
    "render",
    "rotate",
    "truncate",
    "hermitian_complete",
    "to_time",
    "to_spectrum",
    "filter_audio",
    "write_wav",
    "read_wav",
]


def _tilde_channels(coeffs, axis):
    from .array_encoding import tilde_reindex
    return tilde_reindex(coeffs, axis=axis)


@dataclass
class ShSignal:
    """Ambisonics coefficients per bin, shape (B, (order+1)**2).

    ``tilde`` tells whether the vector holds ``a~_nm = (-1)**m a_{n,-m}``.
    """

    order: int
    coeffs: np.ndarray
    tilde: bool = False
    freqs: np.ndarray | None = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim == 1:
            self.coeffs = self.coeffs[None, :]
        if self.coeffs.shape[1] != sh.n_channels(self.order):
            raise ValueError("channel count does not match order")

    def as_tilde(self):
        if self.tilde:
            return self
        return ShSignal(self.order, _tilde_channels(self.coeffs, 1), True, self.freqs)

    def as_plain(self):
        if not self.tilde:
            return self
        return ShSignal(self.order, _tilde_channels(self.coeffs, 1), False, self.freqs)

    @classmethod
    def plane_wave(cls, order, theta, phi, spectrum):
        """Ideal Ambisonics of one plane wave: ``a_nm = conj(Y_nm(dir)) s``."""
        spectrum = np.atleast_1d(np.asarray(spectrum, dtype=complex))
        y = sh.sh_vector(order, theta, phi)
        return cls(order, spectrum[:, None] * y.conj()[None, :], tilde=False)


@dataclass
class BinauralSpectra:
    """Left/right one-sided spectra over ``nfft // 2 + 1`` bins (or any bin set)."""

    left: np.ndarray
    right: np.ndarray
    fs: float = 48000.0
    nfft: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=complex)
        self.right = np.asarray(self.right, dtype=complex)
        if self.left.shape != self.right.shape:
            raise ValueError("left and right spectra must have the same shape")
        if self.nfft is None:
            self.nfft = 2 * (self.left.shape[0] - 1)

    def __add__(self, other):
        return BinauralSpectra(self.left + other.left, self.right + other.right,
                               self.fs, self.nfft, {**self.meta, **other.meta})

    def scaled(self, g):
        return BinauralSpectra(self.left * g, self.right * g, self.fs, self.nfft, dict(self.meta))


def truncate(coeffs, order, axis):
    """Keep the first ``(order+1)**2`` ACN channels along ``axis``."""
    return np.take(coeffs, np.arange(sh.n_channels(order)), axis=axis)


def render(h_nm, a, fs=48000.0, nfft=None):
    """Binaural spectra ``p = h_nm^T a~`` per bin.

    The higher-order operand is truncated to the lower order. ``a`` is
    tilde-reindexed first when it is not flagged as tilde form.
    """
    order = min(h_nm.order, a.order)
    at = a.as_tilde()
    A = truncate(at.coeffs, order, axis=1)
    HL = truncate(h_nm.left, order, axis=0)
    HR = truncate(h_nm.right, order, axis=0)
    if A.shape[0] != HL.shape[1]:
        raise ValueError(f"bin count mismatch: HRTF {HL.shape[1]} vs signal {A.shape[0]}")
    if A.shape[1] != HL.shape[0]:
        raise ValueError("order mismatch after truncation")
    pl = np.einsum("kb,bk->b", HL, A)
    pr = np.einsum("kb,bk->b", HR, A)
    fs = getattr(h_nm, "fs", None) or fs
    if nfft is None:
        nfft = getattr(h_nm, "nfft", None)
    return BinauralSpectra(pl, pr, fs, nfft)


def rotate(obj, delta_phi, delta_theta=0.0):
    """Apply a head rotation to an SH-domain HRTF or an Ambisonics signal.

    For an HRTF the coefficients become ``D(dphi, dtheta, 0) h_nm``. For an
    Ambisonics signal the counter rotation is applied instead, so that
    ``render(h, rotate(a, ...)) == render(rotate(h, ...), a)``: in tilde form
    this is ``D^T a~``, in plain form ``D(0, -dtheta, -dphi) a``.
    """
    if delta_phi == 0 and delta_theta == 0:
        return obj
    D = sh.wigner_d(delta_phi, delta_theta, obj.order).matrix
    if isinstance(obj, ShSignal):
        if obj.tilde:
            coeffs = obj.coeffs @ D
        else:
            coeffs = obj.coeffs @ D.conj()
        return ShSignal(obj.order, coeffs, obj.tilde, obj.freqs)
    return obj.with_coefficients(D @ obj.left, D @ obj.right)


def hermitian_complete(spec, nfft):
    """Full two-sided spectrum from a one-sided one (DC and Nyquist made real)."""
    spec = np.array(spec, dtype=complex)
    spec[0] = spec[0].real
    if nfft % 2 == 0:
        spec[-1] = spec[-1].real
        tail = spec[-2:0:-1].conj()
    else:
        tail = spec[:0:-1].conj()
    return np.concatenate([spec, tail], axis=0)


def to_time(b):
    """Stereo impulse responses, shape (nfft, 2)."""
    out = np.empty((b.nfft, 2))
    for i, s in enumerate((b.left, b.right)):
        full = np.fft.ifft(hermitian_complete(s, b.nfft), axis=0)
        out[:, i] = full.real
    return out


def to_spectrum(x, nfft, axis=0):
    return np.fft.rfft(x, n=nfft, axis=axis)


@dataclass
class StereoAudio:
    samples: np.ndarray
    fs: float
    clipped: bool = False
    gain: float = 1.0


def filter_audio(source, b, normalize=False):
    """Convolve a mono source with the binaural impulse responses of ``b``.

    Uses overlap-add block convolution; the output has
    ``len(source) + nfft - 1`` samples. Without ``normalize`` any sample
    beyond full scale sets ``clipped`` and emits a warning.
    """
    source = np.asarray(source, dtype=float)
    hrir = to_time(b)
    out = np.stack([signal.oaconvolve(source, hrir[:, i]) for i in range(2)], axis=1)
    return _finish(out, b.fs, normalize)


def _finish(out, fs, normalize):
    peak = float(np.max(np.abs(out))) if out.size else 0.0
    gain = 1.0
    if normalize and peak > 0:
        gain = 0.99 / peak
        out = out * gain
    clipped = bool(np.max(np.abs(out), initial=0.0) > 1.0)
    if clipped:
        warnings.warn("audio exceeds full scale; pass normalize=True to avoid clipping")
    return StereoAudio(out, fs, clipped, gain)


def write_wav(path, samples, fs=48000, fmt="float32"):
    """Write (T,) or (T, C) samples as float32 or 24-bit PCM WAV."""
    samples = np.asarray(samples, dtype=float)
    if fmt == "float32":
        wavfile.write(path, int(fs), samples.astype(np.float32))
        return
    if fmt != "pcm24":
        raise ValueError(f"unknown WAV format {fmt!r}")
    x = np.atleast_2d(samples.T).T
    ints = np.round(np.clip(x, -1.0, 1.0 - 2.0 ** -23) * 2 ** 23).astype("<i4")
    raw = ints.view(np.uint8).reshape(ints.shape + (4,))[..., :3]
    with wave.open(str(path), "wb") as w:
        w.setnchannels(x.shape[1])
        w.setsampwidth(3)
        w.setframerate(int(fs))
        w.writeframes(raw.tobytes())


def read_wav(path):
    """Return (samples as float in [-1, 1), fs)."""
    fs, data = wavfile.read(path)
    if data.dtype.kind == "f":
        return data.astype(float), fs
    if data.dtype == np.int32:
        return data / 2.0 ** 31, fs
    if data.dtype == np.int16:
        return data / 2.0 ** 15, fs
    if data.dtype == np.uint8:
        return (data.astype(float) - 128) / 128.0, fs
    raise ValueError(f"unsupported WAV sample type {data.dtype}")
