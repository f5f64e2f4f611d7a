"""HRTF sets, SH-domain encodings and magnitude-least-squares preprocessing.

Three SH encodings are produced per ear:

* ``ls``       -- quadrature-weighted least squares projection,
* ``magls``    -- magnitude least squares against the ideal SH matrix,
* ``aa_magls`` -- array-aware magnitude least squares, fitting the HRTF
  magnitude reproduced *through* a given ASM encoder and steering matrix,
  with a noise-gain penalty.

The magnitude fits use alternating minimization: fix the phases of the
current reproduction, solve the linear least-squares problem, repeat.
Bins are processed in ascending frequency and each bin starts from the
phases of the previous bin's solution.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import sh
from .array_encoding import SOUND_SPEED, FrequencyGrid, default_trunc_order

__all__ = [
    "HrtfSet",
    "HrtfSh",
    "CrossfadeSpec",
    "EncodingError",
    "ls_encode",
    "magls_encode",
    "aa_magls_encode",
    "aa_magls_objective",
    "magls_objective",
    "crossfade_combine",
    "analytic_sphere_hrtf",
    "sphere_hrtf_at",
    "DEFAULT_HEAD_RADIUS",
    "PHASE_INITS",
]

DEFAULT_HEAD_RADIUS = 0.0875
DEFAULT_EARS = ((np.pi / 2, np.pi / 2), (np.pi / 2, -np.pi / 2))
MAX_ITER = 50
REL_TOL = 1e-8
PHASE_INITS = ("carry", "target")


class EncodingError(ValueError):
    """SH encoding is ill-posed on the given grid."""


@dataclass
class CrossfadeSpec:
    """Linear LS -> magnitude-fit transition between ``f_min`` and ``f_max`` (Hz)."""

    f_min: float = 800.0
    f_max: float = 1300.0

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ValueError("crossfade requires 0 < f_min < f_max")

    def alpha(self, f):
        f = np.asarray(f, dtype=float)
        return np.clip((f - self.f_min) / (self.f_max - self.f_min), 0.0, 1.0)

    def validate(self, nyquist):
        if self.f_max >= nyquist:
            raise ValueError("crossfade f_max must lie below Nyquist")


@dataclass
class HrtfSet:
    """Free-field HRTFs on a direction grid; ``left``/``right`` are (Q, B)."""

    grid: sh.DirectionGrid
    freqs: FrequencyGrid
    left: np.ndarray
    right: np.ndarray
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=complex)
        self.right = np.asarray(self.right, dtype=complex)
        shape = (self.grid.size, self.freqs.n_bins)
        if self.left.shape != shape or self.right.shape != shape:
            raise ValueError(f"HRTF matrices must have shape {shape}")

    def ear(self, name):
        return self.left if name == "left" else self.right

    def rotated(self, delta_phi, delta_theta=0.0, order=None):
        """HRTFs of a head turned by ``R = Rz(delta_phi) Ry(delta_theta)``.

        Returns ``h(R^{-1} u)`` for every grid direction ``u``. Analytic sets
        are re-synthesized exactly; others are interpolated through a
        high-order LS encoding and a Wigner-D rotation.
        """
        if delta_phi == 0 and delta_theta == 0:
            return self
        if self.source.get("kind") == "analytic_sphere":
            R = sh.rotation_matrix_zyz(delta_phi, delta_theta)
            ears = []
            for th, ph in self.source["ear_dirs"]:
                t, p, _ = sh.cart2sph(*(R @ sh.sph2cart(th, ph)))
                ears.append((float(t), float(p)))
            return analytic_sphere_hrtf(self.grid, self.freqs, self.source["head_radius"],
                                        ears, self.source["delay"],
                                        self.source["sound_speed"])
        if order is None:
            order = sh.max_exact_order(self.grid) or int(np.sqrt(self.grid.size / 2))
            order = min(order, 30)
        enc = ls_encode(self, order)
        D = sh.wigner_d(delta_phi, delta_theta, order).matrix
        Y = sh.sh_matrix(self.grid, order)
        return HrtfSet(self.grid, self.freqs, Y @ (D @ enc.left), Y @ (D @ enc.right),
                       dict(self.source, rotated=[delta_phi, delta_theta]))

    def save(self, directory):
        """Write the interchange directory: manifest, grid CSV, raw float64 spectra."""
        os.makedirs(directory, exist_ok=True)
        self.grid.to_csv(os.path.join(directory, "grid.csv"))
        manifest = {
            "format": "aamagls-hrtf",
            "version": 1,
            "fs": self.freqs.sample_rate,
            "nfft": self.freqs.nfft,
            "Q": self.grid.size,
            "grid_name": self.grid.name,
            "grid_csv": "grid.csv",
            "ears": {"left": "left.f64", "right": "right.f64"},
            "layout": "bin-major, interleaved (re, im), little-endian float64",
            "source": self.source,
        }
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, default=float)
        for name, mat in (("left", self.left), ("right", self.right)):
            with open(os.path.join(directory, f"{name}.f64"), "wb") as fh:
                fh.write(np.ascontiguousarray(mat.T, dtype="<c16").tobytes())

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "manifest.json")) as fh:
            man = json.load(fh)
        grid = sh.DirectionGrid.from_csv(os.path.join(directory, man["grid_csv"]),
                                         name=man.get("grid_name"))
        freqs = FrequencyGrid(man["fs"], man["nfft"])
        ears = {}
        for name, fname in man["ears"].items():
            raw = np.fromfile(os.path.join(directory, fname), dtype="<c16")
            ears[name] = raw.reshape(freqs.n_bins, man["Q"]).T.astype(complex)
        return cls(grid, freqs, ears["left"], ears["right"], man.get("source", {}))


@dataclass
class HrtfSh:
    """SH-domain HRTF; ``left``/``right`` have shape ((order+1)**2, B)."""

    order: int
    left: np.ndarray
    right: np.ndarray
    variant: str
    freqs: np.ndarray
    fs: float = 48000.0
    nfft: int | None = None
    converged: dict = field(default_factory=dict)

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=complex)
        self.right = np.asarray(self.right, dtype=complex)
        self.freqs = np.asarray(self.freqs, dtype=float)
        K = sh.n_channels(self.order)
        if self.left.shape[0] != K or self.right.shape != self.left.shape:
            raise ValueError("coefficient matrices must have (order+1)**2 rows")
        if self.variant not in ("ls", "magls", "aa_magls", "crossfaded"):
            raise ValueError(f"unknown variant {self.variant!r}")

    def ear(self, name):
        return self.left if name == "left" else self.right

    def with_coefficients(self, left, right, variant=None):
        return replace(self, left=left, right=right, variant=variant or self.variant)

    def truncated(self, order):
        K = sh.n_channels(order)
        return replace(self, order=order, left=self.left[:K], right=self.right[:K])

    def evaluate(self, grid):
        """Space-domain HRTFs ``Y h_nm`` on ``grid``: (left, right), each (Q, B)."""
        Y = sh.sh_matrix(grid, self.order)
        return Y @ self.left, Y @ self.right

    def save(self, path):
        header = {"format": "aamagls-hrtf-sh", "version": 1, "order": self.order,
                  "variant": self.variant, "freqs": self.freqs.tolist(), "fs": self.fs,
                  "nfft": self.nfft,
                  "converged": {k: np.asarray(v).tolist() for k, v in self.converged.items()}}
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            data = np.stack([self.left, self.right])
            fh.write(np.ascontiguousarray(data, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (hlen,) = struct.unpack("<Q", fh.read(8))
            h = json.loads(fh.read(hlen))
            data = np.frombuffer(fh.read(), dtype="<c16").astype(complex)
        data = data.reshape(2, sh.n_channels(h["order"]), len(h["freqs"]))
        return cls(h["order"], data[0], data[1], h["variant"], np.array(h["freqs"]),
                   h["fs"], h["nfft"], {k: np.array(v) for k, v in h["converged"].items()})


# --- encoders ------------------------------------------------------------

def _check_order_supported(grid, order):
    exact = sh.max_exact_order(grid)
    if exact is not None and order > exact:
        raise EncodingError(f"order {order} exceeds the exactness order {exact} of {grid.name}")
    if sh.n_channels(order) > grid.size:
        raise EncodingError(f"{grid.size} directions cannot determine order {order}")


def ls_encode(h, order, weighted=True):
    """Least-squares SH coefficients ``argmin ||Y h_nm - h||``.

    Solved through the (quadrature-)weighted normal equations.
    """
    _check_order_supported(h.grid, order)
    Y = sh.sh_matrix(h.grid, order)
    w = h.grid.weights if weighted else np.ones(h.grid.size)
    G = Y.conj().T @ (w[:, None] * Y)
    try:
        cf = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError as exc:
        raise EncodingError("SH matrix is rank deficient on this grid") from exc
    if np.linalg.cond(G) > 1e10:
        raise EncodingError("SH matrix is rank deficient on this grid")
    YhW = Y.conj().T * w[None, :]
    left = linalg.cho_solve(cf, YhW @ h.left)
    right = linalg.cho_solve(cf, YhW @ h.right)
    return HrtfSh(order, left, right, "ls", h.freqs.freqs, h.freqs.sample_rate, h.freqs.nfft)


def magls_objective(Y, h_nm, target):
    """``|| |Y h_nm| - |target| ||^2``."""
    return float(np.sum((np.abs(Y @ h_nm) - np.abs(target)) ** 2))


def aa_magls_objective(A, R, h_nm, target, noise_var, sig_var=1.0):
    """``sig_var || |A h| - |t| ||^2 + noise_var ||R h||^2`` with ``A = (C~^H V)^T``."""
    mag = np.sum((np.abs(A @ h_nm) - np.abs(target)) ** 2)
    return float(sig_var * mag + noise_var * np.sum(np.abs(R @ h_nm) ** 2))


class _LinearFit:
    """Solver for ``min sig ||A h - u||^2 + noise ||R h||^2`` with fixed A, R."""

    def __init__(self, A, R=None, noise_var=0.0, sig_var=1.0):
        self.A = A
        self.sig = sig_var
        G = sig_var * (A.conj().T @ A)
        if R is not None and noise_var > 0:
            G = G + noise_var * (R.conj().T @ R)
        self.R = R
        self.noise = noise_var
        try:
            self._cf = linalg.cho_factor(G, lower=True)
            self._chol = True
        except linalg.LinAlgError:
            self._pinv = np.linalg.pinv(G)
            self._chol = False

    def solve(self, u):
        rhs = self.sig * (self.A.conj().T @ u)
        if self._chol:
            return linalg.cho_solve(self._cf, rhs)
        return self._pinv @ rhs

    def objective(self, h, mag_target):
        val = self.sig * np.sum((np.abs(self.A @ h) - mag_target) ** 2)
        if self.R is not None and self.noise > 0:
            val += self.noise * np.sum(np.abs(self.R @ h) ** 2)
        return float(val)


def _alternate(fit, mag_target, h0, max_iter, tol, history=None):
    """Alternating phase / linear LS iterations from initial coefficients ``h0``."""
    h = h0
    best_h, best_J = h0, fit.objective(h0, mag_target)
    if history is not None:
        history.append(best_J)
    J_prev = best_J
    converged = False
    for _ in range(max_iter):
        phase = np.exp(1j * np.angle(fit.A @ h))
        h = fit.solve(mag_target * phase)
        J = fit.objective(h, mag_target)
        if history is not None:
            history.append(J)
        if J <= best_J:
            best_h, best_J = h, J
        if abs(J_prev - J) <= tol * max(J_prev, np.finfo(float).tiny):
            converged = True
            break
        J_prev = J
    return best_h, best_J, converged


def _magnitude_fit_bins(fit_for_bin, targets, alpha, low_band, starts=None,
                        max_iter=MAX_ITER, tol=REL_TOL, histories=None, phase_init="carry"):
    """Run the per-bin magnitude fit over ascending bins for one ear.

    ``low_band`` (K, B) supplies the solution where ``alpha == 0`` and the
    initial phases at the first ``alpha > 0`` bin. With ``phase_init="carry"``
    later bins start from the previous bin's reproduction phases; with
    ``"target"`` every bin starts from its complex least-squares fit, which
    inherits the target's own phase. ``starts`` optionally provides extra
    per-bin candidate initializations (K, B).
    """
    if phase_init not in PHASE_INITS:
        raise ValueError(f"phase_init must be one of {PHASE_INITS}")
    K, B = low_band.shape
    out = low_band.copy()
    conv = np.ones(B, dtype=bool)
    prev = None
    for b in range(B):
        if alpha[b] <= 0:
            continue
        fit = fit_for_bin(b)
        mag = np.abs(targets[:, b])
        if phase_init == "target":
            h0 = fit.solve(targets[:, b])
        else:
            seed = out[:, b] if prev is None else prev
            # carry phases of the previous reproduction into this bin
            h0 = fit.solve(mag * np.exp(1j * np.angle(fit.A @ seed)))
        hist = [] if histories is not None else None
        h, J, ok = _alternate(fit, mag, h0, max_iter, tol, hist)
        if starts is not None:
            h0b = starts[:, b]
            hist_b = []
            hb, Jb, okb = _alternate(fit, mag, h0b, max_iter, tol, hist_b)
            if Jb < J:
                h, J, ok, hist = hb, Jb, okb, hist_b if histories is not None else None
        if histories is not None:
            histories[b] = hist
        out[:, b] = h
        conv[b] = ok
        prev = h
    return out, conv


def magls_encode(h, order, fade=None, max_iter=MAX_ITER, tol=REL_TOL, histories=None,
                 phase_init="carry"):
    """Magnitude-least-squares SH encoding.

    Bins with crossfade weight zero return the LS solution; all others
    minimize ``|| |Y h_nm| - |h| ||^2`` (plain sum over directions).
    ``histories``, when a dict, receives per-ear per-bin objective traces.
    ``phase_init`` selects the per-bin starting point (see
    :data:`PHASE_INITS`).
    """
    fade = fade or CrossfadeSpec()
    ls = ls_encode(h, order)
    Y = sh.sh_matrix(h.grid, order)
    alpha = fade.alpha(h.freqs.freqs)
    fit = _LinearFit(Y)
    res, conv = {}, {}
    for ear in ("left", "right"):
        hist = {} if histories is not None else None
        res[ear], conv[ear] = _magnitude_fit_bins(lambda b: fit, h.ear(ear), alpha,
                                                  ls.ear(ear), max_iter=max_iter, tol=tol,
                                                  histories=hist, phase_init=phase_init)
        if histories is not None:
            histories[ear] = hist
    return HrtfSh(order, res["left"], res["right"], "magls", h.freqs.freqs,
                  h.freqs.sample_rate, h.freqs.nfft, converged=conv)


def aa_magls_encode(h, filt, V, fade=None, low_band="ls", init=None, max_iter=MAX_ITER,
                    tol=REL_TOL, histories=None, weighted=False, rotation=None,
                    phase_init="carry"):
    """Array-aware MagLS HRTF for an ASM encoder ``filt`` and steering ``V`` (B, M, Q).

    Per bin with crossfade weight above zero and per ear, minimizes
    ``|| |A h_nm| - |h| ||^2 + (1/snr) ||R h_nm||^2`` where
    ``A = (C~^H V)^T`` is the encoder-through-array response and
    ``R = conj(C~)`` maps HRTF coefficients to microphone noise gains.

    ``low_band`` selects the solution where the crossfade weight is zero:
    ``"ls"`` reuses the array-agnostic LS HRTF, ``"complex"`` minimizes
    the same objective without magnitudes. ``init`` optionally passes an
    :class:`HrtfSh` (e.g. MagLS) as a second starting point per bin; the
    better local optimum is kept.

    ``rotation=(delta_phi, delta_theta)`` designs for a turned head: the
    magnitude target becomes ``h.rotated(...)`` and the result is returned
    in the unrotated frame, so that ``renderer.rotate(result, *rotation)``
    yields the optimized coefficients. ``phase_init`` is as in
    :func:`magls_encode`.
    """
    fade = fade or CrossfadeSpec()
    order = filt.order
    V = np.asarray(V)
    B = h.freqs.n_bins
    if V.shape[0] != B or filt.coeffs.shape[0] != B:
        raise ValueError("HRTF, filter and steering matrices must share frequency bins")
    if V.shape[2] != h.grid.size or V.shape[1] != filt.M:
        raise ValueError("steering matrix does not match HRTF grid or filter")
    if low_band not in ("ls", "complex"):
        raise ValueError("low_band must be 'ls' or 'complex'")
    Ct = filt.tilde_form().coeffs
    eff = np.einsum("bmk,bmq->bqk", Ct.conj(), V)
    noise = 1.0 / filt.snr_ratio
    if weighted:
        sw = np.sqrt(h.grid.weights * h.grid.size / (4 * np.pi))
        eff = eff * sw[None, :, None]
    else:
        sw = None
    alpha = fade.alpha(h.freqs.freqs)
    fits = {}

    def fit_for_bin(b):
        if b not in fits:
            fits.clear()
            fits[b] = _LinearFit(eff[b], Ct[b].conj(), noise)
        return fits[b]

    ls = ls_encode(h, order)
    D = None
    h_target = h
    if rotation is not None and any(rotation):
        D = sh.wigner_d(rotation[0], rotation[1], order).matrix
        h_target = h.rotated(*rotation)
    res, conv = {}, {}
    for ear in ("left", "right"):
        target = h_target.ear(ear)
        if sw is not None:
            target = target * sw[:, None]
        if low_band == "ls":
            low = ls.ear(ear).copy() if D is None else D @ ls.ear(ear)
        else:
            low = np.empty_like(ls.ear(ear))
            for b in range(B):
                low[:, b] = fit_for_bin(b).solve(target[:, b])
        starts = None
        if init is not None:
            starts = init.truncated(order).ear(ear)
            if D is not None:
                starts = D @ starts
        hist = {} if histories is not None else None
        res[ear], conv[ear] = _magnitude_fit_bins(fit_for_bin, target, alpha, low, starts,
                                                  max_iter, tol, hist, phase_init)
        if D is not None:
            res[ear] = D.conj().T @ res[ear]
        if histories is not None:
            histories[ear] = hist
    return HrtfSh(order, res["left"], res["right"], "aa_magls", h.freqs.freqs,
                  h.freqs.sample_rate, h.freqs.nfft, converged=conv)


def crossfade_combine(h_lo, h_hi, fade=None):
    """``(1 - alpha) h_lo + alpha h_hi`` per bin."""
    fade = fade or CrossfadeSpec()
    if h_lo.order != h_hi.order or h_lo.left.shape != h_hi.left.shape:
        raise ValueError("crossfade operands must share order and bins")
    a = fade.alpha(h_lo.freqs)[None, :]
    left = (1 - a) * h_lo.left + a * h_hi.left
    right = (1 - a) * h_lo.right + a * h_hi.right
    conv = {k: np.asarray(v) for k, v in h_hi.converged.items()}
    return replace(h_hi, left=left, right=right, variant="crossfaded", converged=conv)


# --- analytic rigid-sphere head -------------------------------------------

def sphere_hrtf_at(theta, phi, freqs, head_radius=DEFAULT_HEAD_RADIUS, ear=DEFAULT_EARS[0],
                   delay=1e-3, sound_speed=SOUND_SPEED):
    """Rigid-sphere transfer function from plane waves at (theta, phi) to one ear.

    Returns an array of shape (len(theta), len(freqs)). ``delay`` adds a
    common latency so the impulse responses are causal.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    freqs = np.asarray(freqs, dtype=float)
    cosg = np.clip(sh.sph2cart(*ear) @ sh.sph2cart(theta, phi), -1, 1)
    ka = 2 * np.pi * freqs * head_radius / sound_speed
    orders = np.array([default_trunc_order(x) for x in ka])
    nmax = int(orders.max())
    P = sh.legendre_table(nmax, cosg)
    n = np.arange(nmax + 1)
    coef = sh.rigid_sphere_radial(n[None, :], ka[:, None]) * (2 * n + 1) / (4 * np.pi)
    coef[n[None, :] > orders[:, None]] = 0.0
    H = (coef @ P).T
    return H * np.exp(-2j * np.pi * freqs * delay)[None, :]


def analytic_sphere_hrtf(grid, freqs, head_radius=DEFAULT_HEAD_RADIUS, ear_dirs=DEFAULT_EARS,
                         delay=1e-3, sound_speed=SOUND_SPEED):
    """Rigid-sphere head model with point ears on the surface.

    ``ear_dirs`` are (theta, phi) pairs for (left, right); the default puts
    them at (90 deg, +90 deg) and (90 deg, -90 deg).
    """
    if head_radius <= 0:
        raise ValueError("head_radius must be > 0")
    f = freqs.freqs
    left = sphere_hrtf_at(grid.theta, grid.phi, f, head_radius, ear_dirs[0], delay, sound_speed)
    right = sphere_hrtf_at(grid.theta, grid.phi, f, head_radius, ear_dirs[1], delay, sound_speed)
    source = {"kind": "analytic_sphere", "head_radius": head_radius,
              "ear_dirs": [list(map(float, e)) for e in ear_dirs], "delay": delay,
              "sound_speed": sound_speed}
    return HrtfSet(grid, freqs, left, right, source)
