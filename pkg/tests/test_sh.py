import numpy as np
import pytest
from scipy import special

from aamagls import sh


def random_dirs(rng, n):
    v = rng.standard_normal((3, n))
    th, ph, _ = sh.cart2sph(*v)
    return sh.DirectionGrid(th, ph)


# --- spot values -------------------------------------------------------------

def test_y00_is_constant():
    g = sh.DirectionGrid([0.1, 1.0, 2.5], [0.0, 2.0, -1.0])
    np.testing.assert_allclose(sh.sh_matrix(g, 0)[:, 0], 1 / np.sqrt(4 * np.pi), atol=1e-15)


def test_low_order_closed_forms(rng):
    # closed-form Y_1m and Y_22 with Condon-Shortley phase
    g = random_dirs(rng, 50)
    Y = sh.sh_matrix(g, 2)
    t, p = g.theta, g.phi
    c = np.sqrt(3 / (8 * np.pi))
    np.testing.assert_allclose(Y[:, 1], c * np.sin(t) * np.exp(-1j * p), atol=1e-14)
    np.testing.assert_allclose(Y[:, 2], np.sqrt(3 / (4 * np.pi)) * np.cos(t), atol=1e-14)
    np.testing.assert_allclose(Y[:, 3], -c * np.sin(t) * np.exp(1j * p), atol=1e-14)
    y22 = 0.25 * np.sqrt(15 / (2 * np.pi)) * np.sin(t) ** 2 * np.exp(2j * p)
    np.testing.assert_allclose(Y[:, 8], y22, atol=1e-14)


def test_matches_scipy_sph_harm(rng):
    g = random_dirs(rng, 40)
    Y = sh.sh_matrix(g, 12)
    for k in range(Y.shape[1]):
        n, m = sh.acn_to_nm(k)
        ref = special.sph_harm_y(n, m, g.theta, g.phi)
        np.testing.assert_allclose(Y[:, k], ref, atol=1e-12)


def test_acn_roundtrip():
    for k in range(sh.n_channels(8)):
        assert sh.acn_index(*sh.acn_to_nm(k)) == k
    assert sh.acn_to_nm(0) == (0, 0)
    assert sh.acn_to_nm(3) == (1, 1)
    with pytest.raises(ValueError):
        sh.acn_index(1, 2)


# --- invariants --------------------------------------------------------------

@pytest.mark.parametrize("order", [1, 4, 20, 44])
def test_orthonormal_on_lebedev(leb2702, order):
    Y = sh.sh_matrix(leb2702, order)
    G = Y.conj().T @ (leb2702.weights[:, None] * Y)
    assert np.max(np.abs(G - np.eye(G.shape[0]))) < 1e-10


def test_conjugate_symmetry(rng):
    g = random_dirs(rng, 64)
    Y = sh.sh_matrix(g, 6)
    n, m = sh.nm_arrays(6)
    partner = n * n + n - m
    np.testing.assert_allclose(Y[:, partner], ((-1.0) ** m) * Y.conj(), atol=1e-13)


def test_lebedev_weights_and_unsupported():
    g = sh.lebedev_grid(302)
    assert g.size == 302
    assert np.isclose(g.weights.sum(), 4 * np.pi)
    assert sh.max_exact_order(sh.lebedev_grid(2702)) == 44
    with pytest.raises(sh.UnsupportedGridError):
        sh.lebedev_grid(300)


def test_tilde_is_involution(rng):
    T = sh.tilde_matrix(5)
    np.testing.assert_array_equal(T @ T, np.eye(T.shape[0]))
    # tilde(conj(Y)) == Y for a plane wave
    y = sh.sh_vector(5, 0.7, -2.1)
    np.testing.assert_allclose(T @ y.conj(), y, atol=1e-14)


# --- rotations ---------------------------------------------------------------

def test_wigner_unitary(rng):
    for _ in range(10):
        a, b, c = rng.uniform(-np.pi, np.pi, 3)
        D = sh.wigner_d(a, b, 10, c).matrix
        assert np.max(np.abs(D @ D.conj().T - np.eye(D.shape[0]))) < 1e-10


def test_wigner_small_d_closed_form():
    b = 0.83
    d1 = sh.wigner_d_small(1, b)
    c, s = np.cos(b), np.sin(b)
    ref = np.array([[(1 + c) / 2, s / np.sqrt(2), (1 - c) / 2],
                    [-s / np.sqrt(2), c, s / np.sqrt(2)],
                    [(1 - c) / 2, -s / np.sqrt(2), (1 + c) / 2]])
    np.testing.assert_allclose(d1, ref, atol=1e-14)


@pytest.mark.parametrize("order", [1, 4, 8])
def test_rotation_matches_pointwise_oracle(rng, order):
    """D @ f evaluates to f(R^-1 u) at arbitrary points."""
    K = sh.n_channels(order)
    pts = random_dirs(rng, 60)
    for _ in range(20):
        f = rng.standard_normal(K) + 1j * rng.standard_normal(K)
        a, b, c = rng.uniform(-np.pi, np.pi, 3)
        D = sh.wigner_d(a, b, order, c).matrix
        R = sh.rotation_matrix_zyz(a, b, c)
        back = R.T @ pts.unit_vectors()
        th, ph, _ = sh.cart2sph(*back)
        want = sh.sh_matrix(sh.DirectionGrid(th, ph), order) @ f
        got = sh.sh_matrix(pts, order) @ (D @ f)
        assert np.max(np.abs(got - want)) < 1e-8


def test_rotation_composition_and_inverse(rng):
    a, b = rng.uniform(-np.pi, np.pi, 2)
    op = sh.wigner_d(a, b, 5)
    inv = op.inverse()
    np.testing.assert_allclose(inv.matrix @ op.matrix, np.eye(36), atol=1e-12)
    # transpose identity D(a, b, 0)^T == D(0, -b, a)
    np.testing.assert_allclose(op.T, sh.wigner_d(0.0, -b, 5, a).matrix, atol=1e-12)
    # two yaw rotations add
    D1 = sh.wigner_d(0.3, 0.0, 5).matrix
    D2 = sh.wigner_d(0.5, 0.0, 5).matrix
    np.testing.assert_allclose(D1 @ D2, sh.wigner_d(0.8, 0.0, 5).matrix, atol=1e-13)


def test_high_order_wigner_is_stable():
    D = sh.wigner_d(0.4, 1.9, 30).matrix
    assert np.all(np.isfinite(D))
    assert np.max(np.abs(D @ D.conj().T - np.eye(D.shape[0]))) < 1e-9


# --- radial functions --------------------------------------------------------

def test_rigid_sphere_matches_direct_formula():
    """Wronskian form agrees with j_n - (j_n'/h_n') h_n where the latter is stable."""
    ka = np.linspace(0.05, 8.0, 40)
    for n in range(8):
        jn = special.spherical_jn(n, ka)
        jd = special.spherical_jn(n, ka, derivative=True)
        h = jn - 1j * special.spherical_yn(n, ka)
        hd = jd - 1j * special.spherical_yn(n, ka, derivative=True)
        direct = 4 * np.pi * (1j ** n) * (jn - jd / hd * h)
        np.testing.assert_allclose(sh.rigid_sphere_radial(n, ka), direct, rtol=1e-9, atol=1e-12)


def test_rigid_sphere_limits():
    assert sh.rigid_sphere_radial(0, 0.0) == 4 * np.pi
    assert sh.rigid_sphere_radial(3, 0.0) == 0
    # frozen: direct Bessel/Hankel formula at n = 1, ka = 1
    assert abs(sh.rigid_sphere_radial(1, 1.0) - (0.6010083564675905 + 5.587622306396708j)) < 1e-12
    with pytest.raises(ValueError):
        sh.rigid_sphere_radial(1, -1.0)
    big = sh.rigid_sphere_radial(60, 0.01)
    assert np.isfinite(big) and abs(big) < 1e-100


def _direct(n, x):
    jn, jd = special.spherical_jn(n, x), special.spherical_jn(n, x, derivative=True)
    h = jn - 1j * special.spherical_yn(n, x)
    hd = jd - 1j * special.spherical_yn(n, x, derivative=True)
    return 4 * np.pi * (1j ** n) * (jn - jd / hd * h)


def test_legendre_table():
    x = np.linspace(-1, 1, 11)
    P = sh.legendre_table(6, x)
    for n in range(7):
        np.testing.assert_allclose(P[n], special.eval_legendre(n, x), atol=1e-13)


def test_direction_grid_csv_roundtrip(tmp_path):
    g = sh.lebedev_grid(50)
    p = tmp_path / "g.csv"
    g.to_csv(p)
    h = sh.DirectionGrid.from_csv(p)
    np.testing.assert_allclose(h.theta, g.theta)
    np.testing.assert_allclose(h.weights, g.weights)


def test_null_rotation_is_identity():
    np.testing.assert_array_equal(sh.wigner_d(0.0, 0.0, 6).matrix, np.eye(49))
    assert sh.acn_index(1, -1) == 1


def test_high_order_mode_decay_against_mpmath():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40

    def b(n, x):
        x = mp.mpf(x)
        j = lambda k: mp.sqrt(mp.pi / (2 * x)) * mp.besselj(k + mp.mpf(1) / 2, x)
        y = lambda k: mp.sqrt(mp.pi / (2 * x)) * mp.bessely(k + mp.mpf(1) / 2, x)
        jd = j(n - 1) - (n + 1) / x * j(n) if n else -j(1)
        yd = y(n - 1) - (n + 1) / x * y(n) if n else -y(1)
        h, hd = j(n) - 1j * y(n), jd - 1j * yd
        return complex(4 * mp.pi * (1j ** n) * (j(n) - jd / hd * h))

    for n in (0, 5):
        assert abs(sh.rigid_sphere_radial(n, 1.0) - b(n, 1.0)) < 1e-10 * abs(b(0, 1.0))
    assert abs(sh.rigid_sphere_radial(5, 1.0)) < 1e-2 * abs(sh.rigid_sphere_radial(0, 1.0))
