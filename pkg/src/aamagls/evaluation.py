"""Objective metrics: encodability, effective magnitude, binaural errors, ITD/ILD.

All reports export to CSV (one row per bin or azimuth) and JSON. Those
files are the plotting surface; nothing here draws figures.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from . import sh
from .hrtf import CrossfadeSpec

__all__ = [
    "TH_DB",
    "NullSpaceReport",
    "MagnitudeReport",
    "BinauralErrorReport",
    "LateralizationReport",
    "ErbBank",
    "null_space_metric",
    "null_space_report",
    "magnitude_metrics",
    "binaural_errors",
    "itd",
    "ild",
    "lateralization_sweep",
    "asm_nmse",
    "asm_nmse_monte_carlo",
    "binaural_nmse_monte_carlo",
    "UndefinedMetricError",
]

TH_DB = -10.0
DEFAULT_SVD_TOL = 1e-3
CSV_SCHEMA_VERSION = 1


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given input (zero energy)."""


def _channel_label(k):
    n, m = sh.acn_to_nm(k)
    return f"n{n}m{m}"


def _write_csv(path, header, rows, comment):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}; schema v{CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in r])


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


# --- encodability ----------------------------------------------------------

def _row_space_basis(V, svd_rel_tol):
    # columns of V^H span the encodable subspace of C^Q
    U, s, _ = np.linalg.svd(V.conj().T, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    return U[:, s > svd_rel_tol * s[0]]


def null_space_metric(V, y, svd_rel_tol=DEFAULT_SVD_TOL):
    """Energy fraction (dB) of ``y`` in the null space of ``V^H``.

    The null-space projector is built from the singular vectors of ``V^H``
    whose singular values do not exceed ``svd_rel_tol * sigma_max``.
    """
    y = np.asarray(y, dtype=complex)
    if not 0 < svd_rel_tol < 1:
        raise ValueError("svd_rel_tol must lie in (0, 1)")
    ny = np.vdot(y, y).real
    if ny == 0:
        raise UndefinedMetricError("y must be nonzero")
    U = _row_space_basis(np.asarray(V), svd_rel_tol)
    inside = np.sum(np.abs(U.conj().T @ y) ** 2)
    frac = max(ny - inside, 0.0) / ny
    return 10 * np.log10(max(frac, 1e-300))


@dataclass
class NullSpaceReport:
    freqs: np.ndarray
    order: int
    xi_null: np.ndarray  # (B, K) dB
    threshold: float = TH_DB
    svd_rel_tol: float = DEFAULT_SVD_TOL

    def encodable(self):
        return self.xi_null <= self.threshold

    def channel_count(self):
        return self.encodable().sum(axis=1)

    def to_csv(self, path):
        K = self.xi_null.shape[1]
        header = ["freq_hz"] + [f"xi_null_db_{_channel_label(k)}" for k in range(K)]
        rows = [[f] + list(r) for f, r in zip(self.freqs, self.xi_null)]
        _write_csv(path, header, rows,
                   f"null-space energy per SH channel; TH={self.threshold} dB, "
                   f"svd_rel_tol={self.svd_rel_tol}")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, default=_json_default)


def null_space_report(V, grid, order, freqs, svd_rel_tol=DEFAULT_SVD_TOL, threshold=TH_DB):
    """:func:`null_space_metric` for every bin of ``V`` (B, M, Q) and channel up to ``order``."""
    Y = sh.sh_matrix(grid, order)
    ny = np.sum(np.abs(Y) ** 2, axis=0)
    out = np.empty((V.shape[0], Y.shape[1]))
    for b in range(V.shape[0]):
        U = _row_space_basis(V[b], svd_rel_tol)
        inside = np.sum(np.abs(U.conj().T @ Y) ** 2, axis=0)
        frac = np.clip(ny - inside, 0.0, None) / ny
        out[b] = 10 * np.log10(np.maximum(frac, 1e-300))
    return NullSpaceReport(np.asarray(freqs, dtype=float), order, out, threshold, svd_rel_tol)


# --- magnitude ---------------------------------------------------------------

@dataclass
class MagnitudeReport:
    freqs: np.ndarray
    order: int
    xi_mag: np.ndarray  # (B, K) dB
    xi_ideal: np.ndarray  # (K,) dB

    def attenuation(self):
        return self.xi_ideal[None, :] - self.xi_mag

    def to_csv(self, path):
        K = self.xi_mag.shape[1]
        header = (["freq_hz"] + [f"xi_mag_db_{_channel_label(k)}" for k in range(K)]
                  + [f"xi_ideal_db_{_channel_label(k)}" for k in range(K)])
        rows = [[f] + list(r) + list(self.xi_ideal) for f, r in zip(self.freqs, self.xi_mag)]
        _write_csv(path, header, rows, "effective and ideal SH magnitude")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, default=_json_default)


def magnitude_metrics(filt, V, grid):
    """Effective magnitude ``||c_nm^H V||^2`` and ideal ``||y_nm||^2`` in dB."""
    Y = sh.sh_matrix(grid, filt.order)
    if V.shape[0] != filt.coeffs.shape[0] or V.shape[2] != Y.shape[0]:
        raise ValueError("filter, steering matrices and grid are inconsistent")
    eff = np.einsum("bmk,bmq->bkq", filt.coeffs.conj(), V)
    with np.errstate(divide="ignore"):
        xi_mag = 10 * np.log10(np.sum(np.abs(eff) ** 2, axis=2))
    xi_ideal = 10 * np.log10(np.sum(np.abs(Y) ** 2, axis=0))
    return MagnitudeReport(np.asarray(filt.freqs), filt.order, xi_mag, xi_ideal)


# --- binaural errors ---------------------------------------------------------

@dataclass
class BinauralErrorReport:
    freqs: np.ndarray
    alpha: np.ndarray
    eps: dict  # ear -> (B,)
    eps_mag: dict
    eps_comb: dict
    rotation: tuple = (0.0, 0.0)
    label: str = ""

    def to_csv(self, path):
        header = ["freq_hz", "alpha"]
        cols = []
        for ear in ("left", "right"):
            header += [f"eps_bin_{ear}", f"eps_mag_{ear}", f"eps_comb_{ear}"]
            cols += [self.eps[ear], self.eps_mag[ear], self.eps_comb[ear]]
        rows = [[f, a] + [c[i] for c in cols] for i, (f, a) in enumerate(zip(self.freqs,
                                                                              self.alpha))]
        _write_csv(path, header, rows,
                   f"binaural NMSE ({self.label}); rotation_deg="
                   f"{np.rad2deg(self.rotation[0]):g},{np.rad2deg(self.rotation[1]):g}")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, default=_json_default)


def binaural_errors(h_nm, filt, V, h_ref, rotation=(0.0, 0.0), fade=None, h_ref_rotated=None,
                    label=""):
    """Binaural NMSE, magnitude NMSE and their crossfade blend per bin and ear.

    ``h_nm`` is rotated with ``D(rotation)`` and rendered through the
    encoder (``C~^H V``); the reference is ``h_ref`` evaluated at directions
    rotated into the head frame (``h_ref.rotated(*rotation)`` unless given).
    ``filt=None`` means ideal Ambisonics, i.e. ``C~^H V = Y^T``.
    """
    fade = fade or CrossfadeSpec()
    dphi, dtheta = rotation
    if h_ref_rotated is None:
        h_ref_rotated = h_ref.rotated(dphi, dtheta)
    B = h_ref.freqs.n_bins
    if h_nm.left.shape[1] != B:
        raise ValueError("HRTF coefficient bins do not match the reference")
    if filt is None:
        order = h_nm.order
        eff = np.broadcast_to(sh.sh_matrix(h_ref.grid, order).T[None], (B, sh.n_channels(order),
                                                                        h_ref.grid.size))
    else:
        order = filt.order
        if V.shape[0] != B or V.shape[2] != h_ref.grid.size:
            raise ValueError("steering matrices do not match the reference HRTF set")
        eff = filt.effective_response(V)
    hs = h_nm.truncated(order) if h_nm.order > order else h_nm
    D = sh.wigner_d(dphi, dtheta, hs.order).matrix
    alpha = fade.alpha(h_ref.freqs.freqs)
    eps, eps_mag, eps_comb = {}, {}, {}
    for ear in ("left", "right"):
        coeff = D @ hs.ear(ear)
        p = np.einsum("kb,bkq->qb", coeff, eff[:, :coeff.shape[0]])
        ref = h_ref_rotated.ear(ear)
        den = np.sum(np.abs(ref) ** 2, axis=0)
        eps[ear] = np.sum(np.abs(p - ref) ** 2, axis=0) / den
        eps_mag[ear] = np.sum((np.abs(p) - np.abs(ref)) ** 2, axis=0) / den
        eps_comb[ear] = (1 - alpha) * eps[ear] + alpha * eps_mag[ear]
    return BinauralErrorReport(h_ref.freqs.freqs, alpha, eps, eps_mag, eps_comb,
                               (float(dphi), float(dtheta)), label)


# --- closed-form and Monte-Carlo NMSE ---------------------------------------

def asm_nmse(filt, V, grid, noise_var=None, sig_var=1.0):
    """Closed-form ASM NMSE per bin and channel, shape (B, K)."""
    if noise_var is None:
        noise_var = sig_var / filt.snr_ratio
    Y = sh.sh_matrix(grid, filt.order)
    C = filt.coeffs
    resid = np.einsum("bmq,bmk->bqk", V.conj(), C) - Y[None]
    num = sig_var * np.sum(np.abs(resid) ** 2, axis=1) + noise_var * np.sum(np.abs(C) ** 2, axis=1)
    return num / (sig_var * np.sum(np.abs(Y) ** 2, axis=0))[None]


def _cn(rng, shape, var):
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def asm_nmse_monte_carlo(filt, V_bin, grid, bin_index, draws=10000, noise_var=None,
                         sig_var=1.0, seed=0, chunk=1000):
    """Empirical ASM NMSE at one bin from random diffuse fields plus white noise."""
    if noise_var is None:
        noise_var = sig_var / filt.snr_ratio
    rng = np.random.default_rng(seed)
    Y = sh.sh_matrix(grid, filt.order)
    C = filt.coeffs[bin_index]
    Q = grid.size
    err = np.zeros(Y.shape[1])
    ref = np.zeros(Y.shape[1])
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        s = _cn(rng, (Q, n), sig_var)
        noise = _cn(rng, (V_bin.shape[0], n), noise_var)
        a = Y.conj().T @ s
        a_hat = C.conj().T @ (V_bin @ s + noise)
        err += np.sum(np.abs(a_hat - a) ** 2, axis=1)
        ref += np.sum(np.abs(a) ** 2, axis=1)
        done += n
    return err / ref


def binaural_nmse_monte_carlo(coeff, eff_bin, ref_bin, draws=10000, seed=0, chunk=1000):
    """Empirical binaural NMSE at one bin, noise neglected.

    ``coeff`` (K,) HRTF coefficients, ``eff_bin`` (K, Q) encoder-through-array
    response, ``ref_bin`` (Q,) reference HRTF.
    """
    rng = np.random.default_rng(seed)
    Q = ref_bin.size
    row = coeff @ eff_bin
    err = ref = 0.0
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        s = _cn(rng, (Q, n), 1.0)
        p_hat = row @ s
        p = ref_bin @ s
        err += np.sum(np.abs(p_hat - p) ** 2)
        ref += np.sum(np.abs(p) ** 2)
        done += n
    return err / ref


# --- ITD / ILD ---------------------------------------------------------------

def itd(left, right, fs, cutoff=3000.0, max_lag=1e-3):
    """Interaural time difference (s) from the low-passed cross-correlation.

    ``argmax_tau sum_t p_l(t + tau) p_r(t)`` over ``|tau| <= max_lag``; with
    this definition a right ear lagging the left gives a negative value.
    """
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.shape != right.shape:
        raise ValueError("ear signals must have equal length")
    if fs <= 2 * cutoff:
        raise ValueError("sample rate too low for the ITD low-pass")
    if not np.any(left) or not np.any(right):
        raise UndefinedMetricError("ITD undefined for an all-zero ear signal")
    sos = signal.butter(4, cutoff, fs=fs, output="sos")
    pl = signal.sosfiltfilt(sos, left)
    pr = signal.sosfiltfilt(sos, right)
    xc = signal.correlate(pl, pr, mode="full", method="fft")
    lags = signal.correlation_lags(pl.size, pr.size, mode="full")
    L = int(np.floor(max_lag * fs))
    sel = np.abs(lags) <= L
    return lags[sel][np.argmax(xc[sel])] / fs


def erb_bandwidth(f):
    return 24.7 * (4.37e-3 * np.asarray(f, dtype=float) + 1.0)


def erb_number(f):
    return 21.4 * np.log10(1.0 + 4.37e-3 * np.asarray(f, dtype=float))


def erb_number_inv(e):
    return (10 ** (np.asarray(e, dtype=float) / 21.4) - 1.0) / 4.37e-3


@dataclass
class ErbBank:
    """Rounded-exponential auditory filters with centers evenly spaced in ERB number."""

    f_lo: float = 20.0
    f_hi: float = 8000.0
    n_bands: int = 42

    @property
    def centers(self):
        return erb_number_inv(np.linspace(erb_number(self.f_lo), erb_number(self.f_hi),
                                          self.n_bands))

    def response(self, freqs):
        """Magnitude responses ``|H_i(f)|``, shape (n_bands, len(freqs))."""
        fc = self.centers[:, None]
        p = 4.0 * fc / erb_bandwidth(fc)
        g = np.abs(np.asarray(freqs, dtype=float)[None, :] - fc) / fc
        return (1 + p * g) * np.exp(-p * g)


def ild(left, right, fs, bank=None, nfft=None):
    """Mean ILD over ERB bands (dB) and the per-band values.

    Band energies are ``sum_f |H_i(f)| |X(f)|^2``; ILD is
    ``10 log10(E_left / E_right)``.
    """
    bank = bank or ErbBank()
    if fs < 2 * bank.f_hi:
        raise ValueError("sample rate too low for the ERB bank")
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    nfft = nfft or max(left.size, right.size)
    f = np.fft.rfftfreq(nfft, 1 / fs)
    W = bank.response(f)
    El = W @ np.abs(np.fft.rfft(left, nfft)) ** 2
    Er = W @ np.abs(np.fft.rfft(right, nfft)) ** 2
    if np.any(El <= 0) or np.any(Er <= 0):
        raise UndefinedMetricError("ILD undefined for a zero-energy ear signal")
    per_band = 10 * np.log10(El / Er)
    return float(per_band.mean()), per_band


@dataclass
class LateralizationReport:
    azimuth_deg: np.ndarray
    itd: np.ndarray
    itd_ref: np.ndarray
    ild: np.ndarray
    ild_ref: np.ndarray
    rotation_deg: float = 0.0
    label: str = ""
    eps_itd: np.ndarray = field(init=False)
    eps_ild: np.ndarray = field(init=False)

    def __post_init__(self):
        self.eps_itd = np.abs(self.itd - self.itd_ref)
        self.eps_ild = np.abs(self.ild - self.ild_ref)

    def to_csv(self, path):
        header = ["azimuth_deg", "itd_s", "itd_ref_s", "eps_itd_s", "ild_db", "ild_ref_db",
                  "eps_ild_db"]
        rows = zip(self.azimuth_deg, self.itd, self.itd_ref, self.eps_itd, self.ild,
                   self.ild_ref, self.eps_ild)
        _write_csv(path, header, rows,
                   f"lateralization sweep ({self.label}); rotation_deg={self.rotation_deg:g}")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, default=_json_default)


def _cues(hrirs_l, hrirs_r, fs, bank):
    itds = np.array([itd(l, r, fs) for l, r in zip(hrirs_l, hrirs_r)])
    ilds = np.array([ild(l, r, fs, bank)[0] for l, r in zip(hrirs_l, hrirs_r)])
    return itds, ilds


def lateralization_sweep(method, reference, fs, azimuths_deg=None, rotation_deg=0.0,
                         bank=None, label=""):
    """ITD/ILD of ``method`` against ``reference`` for horizontal plane waves.

    ``method`` and ``reference`` are callables mapping (theta, phi) arrays
    to a pair of HRIR arrays (n_dirs, T).
    """
    if azimuths_deg is None:
        azimuths_deg = np.arange(360.0)
    az = np.asarray(azimuths_deg, dtype=float)
    theta = np.full(az.size, np.pi / 2)
    phi = np.deg2rad(az)
    bank = bank or ErbBank()
    ml, mr = method(theta, phi)
    rl, rr = reference(theta, phi)
    itd_m, ild_m = _cues(ml, mr, fs, bank)
    itd_r, ild_r = _cues(rl, rr, fs, bank)
    return LateralizationReport(az, itd_m, itd_r, ild_m, ild_r, float(rotation_deg), label)
