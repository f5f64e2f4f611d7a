"""Array geometry, steering matrices and ASM encoding filters.

The Ambisonics signal matching (ASM) filter maps M microphone spectra to
(N_a+1)**2 Ambisonics channels with a Tikhonov-regularized least-squares
design that assumes a diffuse field over the design grid and white sensor
noise. Everything here is evaluated independently per frequency bin.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import sh
from .renderer import ShSignal

__all__ = [
    "SOUND_SPEED",
    "DEFAULT_SNR_RATIO",
    "ArrayGeometry",
    "FrequencyGrid",
    "EncodingFilter",
    "TruncationOrderError",
    "default_wearable_geometry",
    "caption_wearable_geometry",
    "spherical_32_geometry",
    "default_trunc_order",
    "steering_matrix",
    "steering_matrices",
    "asm_filter",
    "encode",
    "tilde_reindex",
]

SOUND_SPEED = 343.0
DEFAULT_SNR_RATIO = 1e3
MAX_TRUNC_ORDER = 60


class TruncationOrderError(ValueError):
    """Series truncation order too low for the requested wavenumber."""


@dataclass
class ArrayGeometry:
    """Microphone positions in spherical coordinates.

    ``mics`` is an (M, 3) array of (theta, phi, r) in radians and meters.
    ``mount`` is ``"rigid_sphere"`` or ``"free_field"``.
    """

    sphere_radius: float
    mics: np.ndarray
    mount: str = "rigid_sphere"
    name: str = "custom"

    def __post_init__(self):
        self.mics = np.atleast_2d(np.asarray(self.mics, dtype=float))
        if self.mics.shape[1] != 3 or self.mics.shape[0] < 1:
            raise ValueError("mics must be an (M, 3) array with M >= 1")
        if self.mount not in ("rigid_sphere", "free_field"):
            raise ValueError(f"unknown mount {self.mount!r}")
        if self.mount == "rigid_sphere" and not np.allclose(
                self.mics[:, 2], self.sphere_radius, rtol=0, atol=1e-9):
            raise ValueError("rigid_sphere mount requires every mic on the sphere surface")

    @property
    def M(self):
        return self.mics.shape[0]

    @property
    def theta(self):
        return self.mics[:, 0]

    @property
    def phi(self):
        return self.mics[:, 1]

    @property
    def radius(self):
        return self.mics[:, 2]

    def positions(self):
        """(3, M) Cartesian positions relative to the array center."""
        return sh.sph2cart(self.theta, self.phi, self.radius)

    def rotated(self, yaw):
        """Geometry physically turned by ``yaw`` radians about +z."""
        mics = self.mics.copy()
        mics[:, 1] = sh.wrap_azimuth(mics[:, 1] + yaw)
        return ArrayGeometry(self.sphere_radius, mics, self.mount, self.name)

    def to_dict(self):
        return {
            "name": self.name,
            "sphere_radius_m": self.sphere_radius,
            "mount": self.mount,
            "mics": [
                {"theta_deg": float(np.rad2deg(t)), "phi_deg": float(np.rad2deg(p)),
                 "r_m": float(r)}
                for t, p, r in self.mics
            ],
        }

    @classmethod
    def from_dict(cls, d):
        mics = [[np.deg2rad(m["theta_deg"]), np.deg2rad(m["phi_deg"]), m["r_m"]]
                for m in d["mics"]]
        return cls(float(d["sphere_radius_m"]), np.array(mics), d.get("mount", "rigid_sphere"),
                   d.get("name", "custom"))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _geometry_from_degrees(angles_deg, radius, name):
    a = np.deg2rad(np.asarray(angles_deg, dtype=float))
    mics = np.column_stack([a[:, 0], a[:, 1], np.full(len(a), radius)])
    return ArrayGeometry(radius, mics, "rigid_sphere", name)


def default_wearable_geometry():
    """Five-microphone glasses-like array on a rigid sphere of radius 0.1 m."""
    return _geometry_from_degrees(
        [(90, -70), (72, -35), (108, 0), (72, 35), (90, 70)], 0.1, "wearable5")


def caption_wearable_geometry():
    """Variant of the wearable array with azimuths of +-80 and +-40 degrees."""
    return _geometry_from_degrees(
        [(90, -80), (72, -40), (108, 0), (72, 40), (90, 80)], 0.1, "wearable5_caption")


def spherical_32_geometry(radius=0.042):
    """Near-uniform 32-mic rigid-sphere array (pentakis dodecahedron)."""
    g = (1 + np.sqrt(5)) / 2
    ico = []
    for a in (-1, 1):
        for b in (-g, g):
            ico += [(0, a, b), (a, b, 0), (b, 0, a)]
    dod = [(x, y, z) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    for a in (-1, 1):
        for b in (-1, 1):
            dod += [(0, a / g, b * g), (a / g, b * g, 0), (b * g, 0, a / g)]
    xyz = np.array(ico + dod, dtype=float).T
    theta, phi, _ = sh.cart2sph(*xyz)
    mics = np.column_stack([theta, phi, np.full(theta.size, radius)])
    return ArrayGeometry(radius, mics, "rigid_sphere", "sphere32")


@dataclass
class FrequencyGrid:
    """One-sided DFT frequency grid ``f_j = j*fs/nfft`` for j = 0..nfft/2."""

    sample_rate: float = 48000.0
    nfft: int = 1024

    def __post_init__(self):
        if self.nfft < 2 or self.nfft % 2:
            raise ValueError("nfft must be an even integer >= 2")

    @property
    def freqs(self):
        return np.arange(self.nfft // 2 + 1) * self.sample_rate / self.nfft

    @property
    def n_bins(self):
        return self.nfft // 2 + 1

    def wavenumbers(self, sound_speed=SOUND_SPEED):
        return 2 * np.pi * self.freqs / sound_speed

    def __len__(self):
        return self.n_bins


def default_trunc_order(ka):
    return int(min(np.ceil(ka) + 10, MAX_TRUNC_ORDER))


def _cos_angles(geom, grid):
    mic_u = sh.sph2cart(geom.theta, geom.phi)
    return np.clip(mic_u.T @ grid.unit_vectors(), -1.0, 1.0)


def steering_matrix(geom, grid, freq, sound_speed=SOUND_SPEED, trunc_order=None):
    """Array response ``V`` (M, Q) to unit plane waves arriving from ``grid``.

    Rigid-sphere entries use the addition theorem,
    ``sum_n b_n(ka) (2n+1)/(4pi) P_n(cos gamma)``, which equals the double
    sum over (n, m) of ``b_n conj(Y_nm(dir)) Y_nm(mic)``.
    """
    if freq < 0:
        raise ValueError("freq must be >= 0")
    k = 2 * np.pi * freq / sound_speed
    if geom.mount == "free_field":
        pos = geom.positions()
        return np.exp(1j * k * (pos.T @ grid.unit_vectors()))
    ka = k * geom.sphere_radius
    if trunc_order is None:
        trunc_order = default_trunc_order(ka)
    if trunc_order < np.ceil(ka):
        raise TruncationOrderError(
            f"trunc_order={trunc_order} below ceil(ka)={int(np.ceil(ka))}")
    cosg = _cos_angles(geom, grid)
    P = sh.legendre_table(trunc_order, cosg)
    n = np.arange(trunc_order + 1)
    coef = sh.rigid_sphere_radial(n, ka) * (2 * n + 1) / (4 * np.pi)
    return np.tensordot(coef, P, axes=(0, 0))


def steering_matrices(geom, grid, freqs, sound_speed=SOUND_SPEED):
    """Stack of steering matrices, shape (B, M, Q), per-bin truncation."""
    freqs = np.asarray(freqs, dtype=float)
    if geom.mount == "free_field":
        pos = geom.positions()
        proj = pos.T @ grid.unit_vectors()
        k = 2 * np.pi * freqs / sound_speed
        return np.exp(1j * k[:, None, None] * proj[None])
    ka = 2 * np.pi * freqs * geom.sphere_radius / sound_speed
    orders = np.array([default_trunc_order(x) for x in ka])
    nmax = int(orders.max()) if orders.size else 0
    cosg = _cos_angles(geom, grid)
    P = sh.legendre_table(nmax, cosg)
    n = np.arange(nmax + 1)
    coef = sh.rigid_sphere_radial(n[None, :], ka[:, None]) * (2 * n + 1) / (4 * np.pi)
    coef[n[None, :] > orders[:, None]] = 0.0
    return np.tensordot(coef, P, axes=(1, 0))


@dataclass
class EncodingFilter:
    """Per-bin ASM filters ``C_ASM(k)``, shape (B, M, (N_a+1)**2).

    Column ``acn(n, m)`` holds ``c_nm``; encoding is ``a_hat = C^H x``.
    """

    order: int
    coeffs: np.ndarray
    snr_ratio: float
    freqs: np.ndarray
    grid_name: str = "custom"
    sample_rate: float | None = None
    nfft: int | None = None
    tilde: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        self.freqs = np.asarray(self.freqs, dtype=float)
        if self.coeffs.ndim != 3 or self.coeffs.shape[2] != sh.n_channels(self.order):
            raise ValueError("coeffs must have shape (bins, M, (order+1)**2)")
        if self.coeffs.shape[0] != self.freqs.size:
            raise ValueError("one filter matrix per frequency bin required")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite filter coefficients")

    @property
    def M(self):
        return self.coeffs.shape[1]

    def tilde_form(self):
        return self if self.tilde else tilde_reindex(self)

    def effective_response(self, V):
        """``C~^H V`` per bin, shape (B, K, Q); equals ``Y^T`` for perfect encoding."""
        Ct = self.tilde_form().coeffs
        return np.einsum("bmk,bmq->bkq", Ct.conj(), V)

    def save(self, path):
        header = {
            "format": "aamagls-encoding-filter",
            "version": 1,
            "M": self.M,
            "grid": self.grid_name,
            "order": self.order,
            "n_bins": int(self.freqs.size),
            "nfft": self.nfft,
            "fs": self.sample_rate,
            "snr_ratio": self.snr_ratio,
            "tilde": self.tilde,
            "freqs": self.freqs.tolist(),
            "meta": self.meta,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.coeffs, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen))
            data = np.frombuffer(fh.read(), dtype="<c16")
        K = sh.n_channels(header["order"])
        coeffs = data.reshape(header["n_bins"], header["M"], K).astype(complex)
        return cls(header["order"], coeffs, header["snr_ratio"], np.array(header["freqs"]),
                   header["grid"], header["fs"], header["nfft"], header["tilde"],
                   header.get("meta", {}))


def asm_filter(V, grid, order, snr_ratio=DEFAULT_SNR_RATIO, freqs=None, weighted=False):
    """Design ASM filters for every bin of ``V`` (B, M, Q).

    ``C^H = Y^H V^H (V V^H + I/snr_ratio)^{-1}``, solved with a Cholesky
    factorization of the Hermitian positive-definite bracket. With
    ``weighted=True`` the design norms use the grid quadrature weights
    (rescaled to unit mean) instead of plain sums over directions.
    """
    V = np.asarray(V, dtype=complex)
    if V.ndim == 2:
        V = V[None]
    if not np.all(np.isfinite(V)):
        raise ValueError("steering matrix contains non-finite entries")
    if snr_ratio <= 0:
        raise ValueError("snr_ratio must be > 0")
    if order < 0:
        raise ValueError("order must be >= 0")
    B, M, Q = V.shape
    if Q != grid.size:
        raise ValueError("steering matrix and grid disagree on Q")
    Y = sh.sh_matrix(grid, order)
    if weighted:
        sw = np.sqrt(grid.weights * Q / (4 * np.pi))
        V = V * sw
        Y = Y * sw[:, None]
    lam = 1.0 / snr_ratio
    C = np.empty((B, M, Y.shape[1]), dtype=complex)
    eye = np.eye(M)
    for b in range(B):
        A = V[b] @ V[b].conj().T + lam * eye
        cf = linalg.cho_factor(A, lower=True)
        C[b] = linalg.cho_solve(cf, V[b] @ Y)
    if freqs is None:
        freqs = np.arange(B, dtype=float)
    return EncodingFilter(order, C, float(snr_ratio), np.asarray(freqs, dtype=float),
                          grid.name)


def encode(filt, x):
    """Apply ``a_hat = C^H x`` per bin. ``x`` has shape (B, M) or (B, M, T)."""
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != filt.coeffs.shape[0] or x.shape[1] != filt.M:
        raise ValueError(
            f"mic spectra shape {x.shape} does not match filter "
            f"({filt.coeffs.shape[0]} bins, {filt.M} mics)")
    if x.ndim == 2:
        a = np.einsum("bmk,bm->bk", filt.coeffs.conj(), x)
    else:
        a = np.einsum("bmk,bmt->bkt", filt.coeffs.conj(), x)
    return ShSignal(filt.order, a, tilde=filt.tilde, freqs=filt.freqs)


def _tilde_axis(arr, axis):
    K = arr.shape[axis]
    order = int(round(np.sqrt(K))) - 1
    if (order + 1) ** 2 != K:
        raise ValueError(f"{K} channels is not a complete set of SH orders")
    n, m = sh.nm_arrays(order)
    src = n * n + n - m
    sign = ((-1.0) ** m).reshape([-1 if i == axis % arr.ndim else 1 for i in range(arr.ndim)])
    return np.take(arr, src, axis=axis) * sign


def tilde_reindex(obj, axis=-1):
    """Reindex ``(n, m) <- (-1)**m (n, -m)``; an involution.

    Accepts :class:`ShSignal`, :class:`EncodingFilter` or a raw array whose
    ``axis`` indexes ACN channels.
    """
    if isinstance(obj, ShSignal):
        return ShSignal(obj.order, _tilde_axis(obj.coeffs, 1), tilde=not obj.tilde,
                        freqs=obj.freqs)
    if isinstance(obj, EncodingFilter):
        return EncodingFilter(obj.order, _tilde_axis(obj.coeffs, 2), obj.snr_ratio, obj.freqs,
                              obj.grid_name, obj.sample_rate, obj.nfft, not obj.tilde,
                              dict(obj.meta))
    return _tilde_axis(np.asarray(obj), axis)
