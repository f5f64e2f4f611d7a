"""Spherical-harmonic foundation.

Complex orthonormal spherical harmonics with Condon-Shortley phase, ACN
channel ordering, Lebedev direction grids, Wigner-D rotation matrices and
the rigid-sphere radial functions used for scattering arrays.

Angles follow the acoustics convention: ``theta`` is the polar angle
measured from +z (0..pi), ``phi`` the azimuth in (-pi, pi], counted
counter-clockwise from +x (so +90 deg is to the left).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.integrate import lebedev_rule

__all__ = [
    "Direction",
    "DirectionGrid",
    "RotationOp",
    "UnsupportedGridError",
    "acn_index",
    "acn_to_nm",
    "n_channels",
    "sh_matrix",
    "sh_vector",
    "lebedev_grid",
    "supported_lebedev_sizes",
    "wigner_d",
    "wigner_d_small",
    "rigid_sphere_radial",
    "legendre_table",
    "cart2sph",
    "sph2cart",
    "rotation_matrix_zyz",
    "tilde_matrix",
]


class UnsupportedGridError(ValueError):
    """Requested Lebedev size is not tabulated."""


def wrap_azimuth(phi):
    """Map azimuth into (-pi, pi]."""
    phi = np.asarray(phi, dtype=float)
    out = np.mod(phi + np.pi, 2 * np.pi) - np.pi
    # the half-open interval must keep +pi, not -pi
    out = np.where(np.isclose(out, -np.pi, atol=1e-15), np.pi, out)
    return out


@dataclass(frozen=True)
class Direction:
    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"theta={self.theta} outside [0, pi]")
        object.__setattr__(self, "phi", float(wrap_azimuth(self.phi)))

    @classmethod
    def from_degrees(cls, theta_deg, phi_deg):
        return cls(np.deg2rad(theta_deg), np.deg2rad(phi_deg))

    def unit_vector(self):
        return sph2cart(self.theta, self.phi)


@dataclass
class DirectionGrid:
    """Directions on the sphere with quadrature weights summing to 4*pi.

    Parameters
    ----------
    theta, phi : (Q,) array_like
        Polar angle and azimuth in radians.
    weights : (Q,) array_like, optional
        Quadrature weights. Uniform ``4*pi/Q`` when omitted.
    name : str
        Label stored in serialized artifacts.
    """

    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray | None = None
    name: str = "custom"

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.phi = wrap_azimuth(np.atleast_1d(np.asarray(self.phi, dtype=float)))
        if self.theta.shape != self.phi.shape or self.theta.ndim != 1:
            raise ValueError("theta and phi must be 1-D arrays of equal length")
        if self.theta.size < 1:
            raise ValueError("grid must contain at least one direction")
        if np.any(self.theta < -1e-12) or np.any(self.theta > np.pi + 1e-12):
            raise ValueError("theta outside [0, pi]")
        self.theta = np.clip(self.theta, 0.0, np.pi)
        if self.weights is None:
            self.weights = np.full(self.theta.size, 4 * np.pi / self.theta.size)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != self.theta.shape:
                raise ValueError("weights length must match number of directions")
            if np.any(w < 0):
                raise ValueError("quadrature weights must be nonnegative")
            self.weights = w * (4 * np.pi / w.sum())

    def __len__(self):
        return self.theta.size

    @property
    def size(self):
        return self.theta.size

    @classmethod
    def from_degrees(cls, theta_deg, phi_deg, weights=None, name="custom"):
        return cls(np.deg2rad(theta_deg), np.deg2rad(phi_deg), weights, name)

    @classmethod
    def from_cartesian(cls, xyz, weights=None, name="custom"):
        theta, phi, _ = cart2sph(*np.asarray(xyz, dtype=float))
        return cls(theta, phi, weights, name)

    def unit_vectors(self):
        """(3, Q) array of unit vectors."""
        return sph2cart(self.theta, self.phi)

    def directions(self):
        return [Direction(t, p) for t, p in zip(self.theta, self.phi)]

    def nearest(self, theta, phi):
        """Index of the nearest grid point and its angular distance (rad)."""
        u = sph2cart(theta, phi)
        cosang = np.clip(self.unit_vectors().T @ u, -1.0, 1.0)
        idx = int(np.argmax(cosang))
        return idx, float(np.arccos(cosang[idx]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta_rad", "phi_rad", "weight_sr"])
            for t, p, w in zip(self.theta, self.phi, self.weights):
                writer.writerow([repr(float(t)), repr(float(p)), repr(float(w))])

    @classmethod
    def from_csv(cls, path, name=None):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if name is None:
            name = str(path)
        return cls(data[:, 0], data[:, 1], data[:, 2], name=name)


def sph2cart(theta, phi, r=1.0):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)])


def cart2sph(x, y, z):
    """Return (theta, phi, r) with theta the polar angle from +z."""
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    r = np.sqrt(x**2 + y**2 + z**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(r > 0, np.arccos(np.clip(z / np.where(r > 0, r, 1), -1, 1)), 0.0)
    phi = np.arctan2(y, x)
    return theta, wrap_azimuth(phi), r


def n_channels(order):
    return (order + 1) ** 2


def acn_index(n, m):
    """ACN channel index ``n**2 + n + m``."""
    if n < 0 or abs(m) > n:
        raise ValueError(f"invalid SH index (n={n}, m={m})")
    return n * n + n + m


def acn_to_nm(index):
    """Inverse of :func:`acn_index`."""
    if index < 0:
        raise ValueError("ACN index must be nonnegative")
    n = int(np.floor(np.sqrt(index)))
    return n, index - n * n - n


@lru_cache(maxsize=64)
def _nm_arrays(order):
    n = np.concatenate([np.full(2 * k + 1, k) for k in range(order + 1)])
    m = np.concatenate([np.arange(-k, k + 1) for k in range(order + 1)])
    return n, m


def nm_arrays(order):
    """Order and degree per ACN channel, as two int arrays."""
    n, m = _nm_arrays(order)
    return n.copy(), m.copy()


def _normalized_legendre(order, x):
    """Fully normalized associated Legendre values for m >= 0.

    Returns array ``P[n, m, :]`` including the Condon-Shortley phase and the
    factor sqrt((2n+1)/(4pi) (n-m)!/(n+m)!), so that
    ``Y_nm = P[n, m] * exp(1j*m*phi)``.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((order + 1, order + 1) + x.shape)
    P[0, 0] = 1.0 / np.sqrt(4 * np.pi)
    for m in range(1, order + 1):
        P[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * P[m - 1, m - 1]
    for m in range(0, order):
        P[m + 1, m] = np.sqrt(2 * m + 3.0) * x * P[m, m]
    for m in range(0, order + 1):
        for n in range(m + 2, order + 1):
            a = np.sqrt((4.0 * n * n - 1) / (n * n - m * m))
            b = np.sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1) ** 2 - 1))
            P[n, m] = a * (x * P[n - 1, m] - b * P[n - 2, m])
    return P


def _sh_from_angles(order, theta, phi):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    P = _normalized_legendre(order, np.cos(theta))
    Y = np.empty((theta.size, n_channels(order)), dtype=complex)
    for n in range(order + 1):
        for m in range(0, n + 1):
            val = P[n, m] * np.exp(1j * m * phi)
            Y[:, n * n + n + m] = val
            if m > 0:
                Y[:, n * n + n - m] = (-1) ** m * np.conj(val)
    return Y


def sh_matrix(grid, order):
    """Complex SH matrix ``Y`` of shape (Q, (order+1)**2).

    ``Y[q, acn(n, m)] = Y_nm(theta_q, phi_q)``.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    return _sh_from_angles(order, grid.theta, grid.phi)


def sh_vector(order, theta, phi):
    """SH values at a single direction, shape ((order+1)**2,)."""
    return _sh_from_angles(order, theta, phi)[0]


def tilde_matrix(order):
    """Signed permutation ``T`` with ``(T a)_nm = (-1)**m a_{n,-m}``."""
    n, m = _nm_arrays(order)
    K = n.size
    T = np.zeros((K, K))
    T[np.arange(K), n * n + n - m] = (-1.0) ** m
    return T


# --- Lebedev grids -------------------------------------------------------

_LEBEDEV_ORDERS = (3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31, 35,
                   41, 47, 53, 59, 65, 71, 77, 83, 89, 95, 101, 107, 113, 119,
                   125, 131)
# number of points for each precision order above
_LEBEDEV_SIZES = (6, 14, 26, 38, 50, 74, 86, 110, 146, 170, 194, 230, 266, 302,
                  350, 434, 590, 770, 974, 1202, 1454, 1730, 2030, 2354, 2702,
                  3074, 3470, 3890, 4334, 4802, 5294, 5810)
_SIZE_TO_DEGREE = dict(zip(_LEBEDEV_SIZES, _LEBEDEV_ORDERS))


def supported_lebedev_sizes():
    return tuple(_LEBEDEV_SIZES)


def lebedev_degree(point_count):
    """Polynomial degree integrated exactly by the Lebedev rule."""
    try:
        return _SIZE_TO_DEGREE[point_count]
    except KeyError:
        raise UnsupportedGridError(
            f"unsupported Lebedev size {point_count}; "
            f"choose one of {_LEBEDEV_SIZES}") from None


@lru_cache(maxsize=16)
def _lebedev_cached(point_count):
    xyz, w = lebedev_rule(lebedev_degree(point_count))
    if xyz.shape[1] != point_count:
        raise UnsupportedGridError(f"table mismatch for size {point_count}")
    theta, phi, _ = cart2sph(*xyz)
    return theta, phi, w


def lebedev_grid(point_count=2702):
    """Lebedev quadrature grid with ``point_count`` directions.

    Weights are scaled to sum to 4*pi. Exact for SH products up to total
    degree :func:`lebedev_degree`, i.e. orthonormal up to order
    ``degree // 2``.
    """
    theta, phi, w = _lebedev_cached(point_count)
    return DirectionGrid(theta.copy(), phi.copy(), w.copy(), name=f"lebedev{point_count}")


def max_exact_order(grid):
    """Largest SH order for which the grid quadrature is exact, if known."""
    if grid.name.startswith("lebedev"):
        return lebedev_degree(int(grid.name[len("lebedev"):])) // 2
    return None


# --- rotations -----------------------------------------------------------

def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_matrix_zyz(alpha, beta, gamma=0.0):
    """Active rotation Rz(alpha) @ Ry(beta) @ Rz(gamma) as a 3x3 matrix."""
    return _rz(alpha) @ _ry(beta) @ _rz(gamma)


def wigner_d_small(n, beta):
    """Wigner small-d matrix ``d^n_{m'm}(beta)``, rows m' and columns m.

    Evaluated through Jacobi polynomials (three-term recurrence inside
    ``scipy.special.eval_jacobi``) with the index symmetries folded into
    the exponents, so no factorial of size 2n is formed.
    """
    size = 2 * n + 1
    mp, m = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
    cands = np.stack([n + m, n - m, n + mp, n - mp])
    k = cands.min(axis=0)
    which = cands.argmin(axis=0)
    a = np.where((which == 0) | (which == 3), mp - m, m - mp)
    lam = np.where((which == 0) | (which == 3), mp - m, 0)
    b = 2 * n - 2 * k - a
    half = beta / 2.0
    sh, ch = np.sin(half), np.cos(half)
    coef = np.sqrt(special.binom(2 * n - k, k + a) / special.binom(k + b, b))
    jac = special.eval_jacobi(k, a, b, np.cos(beta))
    d = (-1.0) ** lam * coef * np.power(sh, a) * np.power(ch, b) * jac
    return d.reshape(size, size)


@dataclass
class RotationOp:
    """Block-diagonal SH rotation ``D(alpha, beta, gamma)``.

    ``matrix @ f_nm`` are the coefficients of the rotated function
    ``g(u) = f(R^{-1} u)`` with ``R = Rz(alpha) Ry(beta) Rz(gamma)``.
    """

    delta_phi: float
    delta_theta: float
    order: int
    matrix: np.ndarray = field(repr=False)
    gamma: float = 0.0

    @property
    def T(self):
        return self.matrix.T

    def inverse(self):
        return RotationOp(-self.gamma, -self.delta_theta, self.order,
                          self.matrix.conj().T, -self.delta_phi)

    def block(self, n):
        lo, hi = n * n, (n + 1) ** 2
        return self.matrix[lo:hi, lo:hi]


def wigner_d(delta_phi, delta_theta, order, gamma=0.0):
    """Wigner-D rotation ``D(delta_phi, delta_theta, gamma)`` up to ``order``.

    Entries are ``exp(-1j*m'*alpha) d^n_{m'm}(beta) exp(-1j*m*gamma)``.
    The transpose identity ``D(a, b, 0).T == D(0, -b, a)`` holds exactly;
    the counter rotation ``D(0, -b, -a)`` equals ``D(a, b, 0)^H``.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    K = n_channels(order)
    D = np.zeros((K, K), dtype=complex)
    for n in range(order + 1):
        ms = np.arange(-n, n + 1)
        blk = (np.exp(-1j * ms * delta_phi)[:, None] * wigner_d_small(n, delta_theta)
               * np.exp(-1j * ms * gamma)[None, :])
        lo = n * n
        D[lo:lo + 2 * n + 1, lo:lo + 2 * n + 1] = blk
    return RotationOp(float(delta_phi), float(delta_theta), order, D, float(gamma))


# --- radial functions ----------------------------------------------------

def _sph_h2_prime(n, x):
    return special.spherical_jn(n, x, derivative=True) - 1j * special.spherical_yn(
        n, x, derivative=True)


def rigid_sphere_radial(n, ka):
    """Rigid-sphere mode strength ``b_n(ka)`` for a sensor on the surface.

    ``b_n = 4 pi i^n [j_n - (j_n'/h_n') h_n]`` with the second-kind spherical
    Hankel function. Evaluated through the Wronskian identity
    ``b_n = -4 pi i^(n+1) / ((ka)^2 h_n'(ka))`` which stays finite where
    ``h_n`` overflows; the ka -> 0 limit (4 pi for n = 0, else 0) is exact.
    """
    n_arr = np.asarray(n)
    ka_arr = np.asarray(ka, dtype=float)
    if np.any(ka_arr < 0):
        raise ValueError("ka must be >= 0")
    n_b, ka_b = np.broadcast_arrays(n_arr, ka_arr)
    out = np.zeros(n_b.shape, dtype=complex)
    zero = ka_b == 0
    out[zero & (n_b == 0)] = 4 * np.pi
    nz = ~zero
    if np.any(nz):
        x = ka_b[nz]
        nn = n_b[nz]
        with np.errstate(over="ignore", invalid="ignore"):
            hp = _sph_h2_prime(nn, x)
            val = -4 * np.pi * (1j ** ((nn + 1) % 4)) / (x * x * hp)
        val[~np.isfinite(hp)] = 0.0
        out[nz] = val
    if out.ndim == 0:
        return complex(out)
    return out


def legendre_table(order, x):
    """Legendre polynomials ``P_n(x)`` for n = 0..order, shape (order+1, *x.shape)."""
    x = np.asarray(x, dtype=float)
    P = np.empty((order + 1,) + x.shape)
    P[0] = 1.0
    if order >= 1:
        P[1] = x
    for n in range(2, order + 1):
        P[n] = ((2 * n - 1) * x * P[n - 1] - (n - 1) * P[n - 2]) / n
    return P
