import numpy as np
import pytest
from hypothesis import given, strategies as st

from tentspde import heat, parabolic
from tentspde.grid import GridSpec, SpaceField, SpaceTimeField, ball_members


def dense_difference(g: GridSpec) -> list[np.ndarray]:
    """Forward differences as dense matrices, built node by node."""
    size = g.N**g.n
    out = []
    for j in range(g.n):
        D = np.zeros((size, size))
        for idx in np.ndindex(*g.spatial_shape):
            nxt = list(idx)
            nxt[j] = (nxt[j] + 1) % g.N
            row = np.ravel_multi_index(idx, g.spatial_shape)
            D[row, np.ravel_multi_index(tuple(nxt), g.spatial_shape)] += 1 / g.dx
            D[row, row] -= 1 / g.dx
        out.append(D)
    return out


def dense_step(a: parabolic.CoefficientField, m: int) -> np.ndarray:
    g = a.grid
    D = dense_difference(g)
    A = np.zeros((g.N**g.n,) * 2)
    for i in range(g.n):
        for j in range(g.n):
            A += D[i].T @ np.diag(a.slice(m)[..., i, j].ravel()) @ D[j]
    return np.eye(len(A)) + g.dt * A


def dense_solution(a, psi: np.ndarray, F: np.ndarray | None) -> np.ndarray:
    g = a.grid
    D = dense_difference(g)
    u = psi.ravel()
    out = []
    for m in range(1, g.M + 1):
        rhs = u.copy()
        if F is not None:
            rhs -= g.dt * sum(D[j].T @ F[m - 1, ..., j].ravel() for j in range(g.n))
        u = np.linalg.solve(dense_step(a, m), rhs)
        out.append(u.reshape(g.spatial_shape))
    return np.array(out)


def l2(v: np.ndarray, g: GridSpec, time=True) -> float:
    return float(np.sqrt(np.sum(v**2) * g.cell_volume * (g.dt if time else 1.0)))


# ---------------------------------------------------------- coefficients


def test_identity_law():
    g = GridSpec(2, 8, 8)
    a = parabolic.sample_coefficients(g, "identity")
    assert np.all(a.values == np.eye(2)) and a.lam == 1.0
    a.check()


@pytest.mark.parametrize("law", ["checkerboard", "smooth"])
@pytest.mark.parametrize("skew", [0.0, 0.25])
def test_sampled_laws_are_elliptic(law, skew):
    g = GridSpec(2, 16, 16, 1.0, 0.1)
    a = parabolic.sample_coefficients(g, law, 0.5, 2.0, seed=3, skew=skew)
    a.check()
    sym = 0.5 * (a.values + np.swapaxes(a.values, -1, -2))
    assert np.linalg.eigvalsh(sym).min() >= 0.5 - 1e-12
    assert np.linalg.eigvalsh(sym).max() <= 2.0 + 1e-12
    assert a.symmetric == (skew == 0)


def test_checkerboard_cells_are_constant():
    g = GridSpec(1, 32, 64, 1.0, 1 / 16)
    a = parabolic.sample_coefficients(g, "checkerboard", 0.5, 2.0, cellsize=0.25, seed=1)
    v = a.values[..., 0, 0]
    # spatial side 0.25 -> 8 nodes, temporal side 1/16 -> all 64 slices
    assert np.all(v == v[0])
    for c in range(4):
        assert np.all(v[:, 8 * c : 8 * c + 8] == v[0, 8 * c])
    assert len(np.unique(v)) == 4


def test_coefficient_validation():
    g = GridSpec(1, 8, 8)
    with pytest.raises(ValueError):
        parabolic.sample_coefficients(g, "nope")
    with pytest.raises(ValueError):
        parabolic.sample_coefficients(g, "smooth", 2.0, 1.0)
    bad = parabolic.CoefficientField(g, np.full((8, 8, 1, 1), 0.1), 0.5, 2.0)
    with pytest.raises(ValueError, match="ellipticity"):
        bad.check()


def test_coefficient_field_round_trip():
    g = GridSpec(2, 8, 8)
    a = parabolic.sample_coefficients(g, "checkerboard", seed=2, skew=0.3)
    b = parabolic.CoefficientField.from_field(a.to_field(), a.lam, a.Lam)
    assert np.array_equal(a.values, b.values) and not b.symmetric


def test_stiffness_matches_dense():
    g = GridSpec(2, 8, 8)
    a = parabolic.sample_coefficients(g, "checkerboard", seed=5, skew=0.4)
    A = parabolic.stiffness(g, a.slice(3)).toarray()
    assert np.allclose(np.eye(64) + g.dt * A, dense_step(a, 3), atol=1e-12)


# --------------------------------------------------------------- solves


def test_zero_data_gives_zero():
    g = GridSpec(1, 16, 8)
    a = parabolic.sample_coefficients(g, "checkerboard", seed=0)
    assert np.all(parabolic.solve_cauchy(a, SpaceField.zeros(g)).values == 0)
    assert np.all(parabolic.lions(a, SpaceTimeField.zeros(g, 1)).values == 0)


@pytest.mark.parametrize("g", [GridSpec(1, 16, 8, 1.0, 0.1), GridSpec(2, 8, 8, 1.0, 0.1)])
def test_solution_matches_dense_oracle(g, rng):
    a = parabolic.sample_coefficients(g, "checkerboard", seed=4, skew=0.3 if g.n == 2 else 0.0)
    psi = rng.standard_normal(g.spatial_shape)
    F = rng.standard_normal((g.M,) + g.spatial_shape + (g.n,))
    u = parabolic.solve_cauchy(a, SpaceField(g, psi), SpaceTimeField(g, F))
    assert np.allclose(u.values[..., 0], dense_solution(a, psi, F), atol=1e-10)


@pytest.mark.parametrize("g", [GridSpec(1, 64, 32, 1.0, 0.05), GridSpec(2, 16, 16, 1.0, 0.05)])
def test_identity_coefficients_match_fourier_stepping(g, rng):
    x = g.coordinates()
    psi = sum(rng.standard_normal() * np.cos(2 * np.pi * (k * x[0] + (k % 2) * x[-1])) for k in range(4))
    u = parabolic.solve_cauchy(parabolic.identity_coefficients(g), SpaceField(g, psi))
    k = np.fft.fftfreq(g.N, 1.0 / g.N)
    sym1 = (2 * np.sin(np.pi * k / g.N) / g.dx) ** 2
    sym = sym1 if g.n == 1 else sym1[:, None] + sym1[None, :]
    spec = np.fft.fftn(psi)
    for m in range(1, g.M + 1):
        spec = spec / (1 + g.dt * sym)
        assert np.allclose(u.values[m - 1, ..., 0], np.fft.ifftn(spec).real, atol=1e-9)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["checkerboard", "smooth", "identity"]))
def test_energy_bound_and_identity(seed, law):
    rng = np.random.default_rng(seed)
    g = GridSpec(2, 8, 8, 1.0, 0.1) if seed % 2 else GridSpec(1, 32, 16, 1.0, 0.1)
    a = parabolic.sample_coefficients(g, law, 0.5, 2.0, seed=seed, skew=0.3 if g.n == 2 else 0.0)
    psi = SpaceField(g, rng.standard_normal(g.spatial_shape))
    u = parabolic.solve_cauchy(a, psi)
    prof, p0 = parabolic.energy_profile(u, psi, a.lam)
    assert prof.max() <= (1 + 1e-8) * p0
    F = SpaceTimeField(g, rng.standard_normal((g.M,) + g.spatial_shape + (g.n,)))
    uF = parabolic.solve_cauchy(a, psi, F)
    assert np.abs(parabolic.energy_identity_defect(a, psi, F, uF)).max() <= 1e-10 * p0


@given(st.integers(0, 2**31 - 1))
def test_lions_l2_bound(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec(1, 32, 16, 1.0, 0.1) if seed % 2 else GridSpec(2, 8, 8, 1.0, 0.1)
    lam = float(rng.uniform(0.1, 1.0))
    a = parabolic.sample_coefficients(g, "checkerboard", lam, 3.0, seed=seed)
    F = rng.standard_normal((g.M,) + g.spatial_shape + (g.n,))
    grad = parabolic.lions(a, SpaceTimeField(g, F))
    assert l2(grad.values, g) <= (1 + 1e-8) / lam * l2(F, g)


def test_lions_trunc_bound_uniform_in_T(rng):
    g = GridSpec(1, 64, 64, 1.0, 0.1)
    a = parabolic.sample_coefficients(g, "checkerboard", 0.5, 2.0, seed=8)
    bound = (2 * a.lam) ** -0.5 * (1 + 1e-8)
    for _ in range(10):
        F = SpaceTimeField(g, rng.standard_normal((64, 64, 1)))
        for T in (g.T_max / 4, g.T_max / 2, g.T_max):
            assert l2(parabolic.lions_trunc(T, a, F).values, g) <= bound * l2(F.values, g)
    with pytest.raises(ValueError):
        parabolic.lions_trunc(0.2, a, F)


def test_lions_identity_matches_fourier_oracle(rng):
    g = GridSpec(1, 32, 16, 1.0, 0.05)
    F = rng.standard_normal((16, 32, 1))
    grad = parabolic.lions(parabolic.identity_coefficients(g), SpaceTimeField(g, F))
    k = np.fft.fftfreq(g.N, 1.0 / g.N)
    fwd = (np.exp(2j * np.pi * k / g.N) - 1) / g.dx  # symbol of the forward difference
    spec = np.zeros(g.N, complex)
    for m in range(g.M):
        spec = (spec - g.dt * np.conj(fwd) * np.fft.fft(F[m, :, 0])) / (1 + g.dt * np.abs(fwd) ** 2)
        assert np.allclose(grad.values[m, :, 0], np.fft.ifft(fwd * spec).real, atol=1e-10)


# ------------------------------------------------------------ propagator


def test_propagator_matches_dense_product(rng):
    g = GridSpec(1, 16, 8, 1.0, 0.1)
    a = parabolic.sample_coefficients(g, "checkerboard", seed=9)
    H = parabolic.factorize(a)
    f = SpaceField(g, rng.standard_normal(16))
    P = np.eye(16)
    for k in range(3, 8):
        P = np.linalg.solve(dense_step(a, k), P)
    assert np.allclose(parabolic.propagator_apply(H, 7, 2, f).scalar(), P @ f.scalar(), atol=1e-10)
    assert np.array_equal(parabolic.propagator_apply(H, 4, 4, f).values, f.values)
    with pytest.raises(ValueError):
        parabolic.propagator_apply(H, 2, 4, f)


@pytest.mark.parametrize("g", [GridSpec(1, 32, 16), GridSpec(2, 8, 8)])
def test_propagator_adjoint_and_contraction(g, rng):
    a = parabolic.sample_coefficients(g, "checkerboard", seed=1, skew=0.4 if g.n == 2 else 0.0)
    H = parabolic.factorize(a)
    for _ in range(5):
        f = SpaceField(g, rng.standard_normal(g.spatial_shape))
        h = SpaceField(g, rng.standard_normal(g.spatial_shape))
        Gf = parabolic.propagator_apply(H, g.M, 1, f)
        lhs = np.sum(Gf.values * h.values)
        rhs = np.sum(f.values * parabolic.propagator_adjoint_apply(H, g.M, 1, h).values)
        assert lhs == pytest.approx(rhs, rel=1e-10)
        assert np.linalg.norm(Gf.values) <= (1 + 1e-8) * np.linalg.norm(f.values)


def test_gmres_fallback_recovers(rng):
    g = GridSpec(1, 16, 8)
    H = parabolic.factorize(parabolic.sample_coefficients(g, "checkerboard", seed=2))

    class Sloppy:
        def __init__(self, lu):
            self.lu = lu

        def solve(self, b, trans="N"):
            return self.lu.solve(b, trans=trans) * (1 + 1e-6)

    for key, (K, lu) in list(H._factors.items()):
        H._factors[key] = (K, Sloppy(lu))
    b = rng.standard_normal(16)
    x = H.step(1, b)
    K = H._factors[H._keys[0]][0]
    assert np.linalg.norm(K @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solver_divergence_error(monkeypatch, rng):
    g = GridSpec(1, 8, 8)
    H = parabolic.factorize(parabolic.sample_coefficients(g, "checkerboard", seed=2))
    monkeypatch.setattr(parabolic, "RESIDUAL_TOL", 1e-300)
    with pytest.raises(parabolic.SolverDivergenceError) as err:
        H.step(3, rng.standard_normal(8))
    assert err.value.step == 3 and err.value.iterations > 0


# ---------------------------------------------------------- off-diagonal


def test_fit_decay_on_exact_line():
    x = np.linspace(0, 5, 12)
    c, rho = parabolic.fit_decay(x, 1.0 - 0.3 * x)
    assert c == pytest.approx(0.3) and rho == pytest.approx(-1.0)


def _geometry(g):
    src = ball_members(g, (g.N // 2,), g.L / 20)
    f = SpaceField(g, src.mask() * 1.0)
    targets = [ball_members(g, (g.N // 2 + int(frac * g.N),), g.L / 20) for frac in (0.15, 0.2, 0.25, 0.3)]
    times = [(m, 0) for m in (g.M // 16, g.M // 8, g.M // 4, g.M // 2, g.M)]
    return src, f, targets, times


def test_identity_offdiag_matches_heat_prediction():
    g = GridSpec(1, 128, 256, 1.0, 0.02)
    H = parabolic.factorize(parabolic.identity_coefficients(g))
    src, f, targets, times = _geometry(g)
    disc = parabolic.combine_offdiag([parabolic.verify_offdiag(H, E, src, f, times) for E in targets])
    spec = parabolic.combine_offdiag([parabolic.heat_offdiag(E, src, f, times) for E in targets])
    assert disc.c_hat > 0 and abs(disc.rho) >= 0.9
    assert abs(disc.c_hat - spec.c_hat) <= 0.2 * spec.c_hat
    assert disc.contraction <= 1 + 1e-8


def test_offdiag_rejects_zero_distance():
    g = GridSpec(1, 64, 16)
    H = parabolic.factorize(parabolic.identity_coefficients(g))
    src = ball_members(g, (32,), 0.05)
    f = SpaceField(g, src.mask() * 1.0)
    with pytest.raises(ValueError, match="positive distance"):
        parabolic.verify_offdiag(H, ball_members(g, (34,), 0.05), src, f, [(8, 0)])
    with pytest.raises(ValueError, match="supported"):
        parabolic.verify_offdiag(H, ball_members(g, (5,), 0.05), src, SpaceField(g, np.ones(64)), [(8, 0)])


# ---------------------------------------------------------- Caccioppoli


def test_caccioppoli_constant_is_zero():
    g = GridSpec(1, 64, 64, 1.0, 0.1)
    u = SpaceTimeField(g, np.full((64, 64), 3.0))
    rep = parabolic.verify_caccioppoli(u, ball_members(g, (32,), 0.1), 0.1)
    assert rep.rho == 0.0


def test_caccioppoli_linear_window():
    # u = x - 1/2 is caloric; away from the wrap the ratio is 3 alpha^3 / beta^5 in the continuum
    g = GridSpec(1, 512, 256, 1.0, 0.1)
    x = g.coordinates()[0]
    u = SpaceTimeField(g, np.broadcast_to(x - 0.5, (256, 512)))
    r = 0.1
    rep = parabolic.verify_caccioppoli(u, ball_members(g, (256,), r), r, alpha=1.0, beta=1.5)
    assert rep.rho == pytest.approx(3 / 1.5**5, rel=0.05)


def _caccioppoli_corpus(g, count):
    best = 0.0
    for s in range(count):
        rng = np.random.default_rng(s)
        a = parabolic.sample_coefficients(g, "checkerboard", 0.5, 2.0, cellsize=g.L / 8, seed=s)
        xs = g.coordinates()[0]
        psi = sum(rng.standard_normal() * np.cos(2 * np.pi * k * xs + rng.uniform(0, 6)) for k in range(1, 4))
        u = parabolic.solve_cauchy(a, SpaceField(g, psi))
        c = int(rng.integers(g.N))
        best = max(best, parabolic.verify_caccioppoli(u, ball_members(g, (c,), 0.1), 0.1).rho)
    return best


def test_caccioppoli_corpus_refinement_stable():
    coarse = _caccioppoli_corpus(GridSpec(1, 64, 64, 1.0, 0.1), 30)
    fine = _caccioppoli_corpus(GridSpec(1, 128, 128, 1.0, 0.1), 30)
    assert np.isfinite(coarse) and coarse > 0
    assert max(coarse / fine, fine / coarse) <= 2.0


def test_carleson_ratio_by_hand():
    g = GridSpec(1, 32, 32, 1.0, 0.25)
    grad = SpaceTimeField(g, np.ones((32, 32)))
    b = ball_members(g, (5,), 0.25)
    expected = g.time_index(0.0625) * g.dt * b.measure / 0.25
    assert parabolic.carleson_ratio(grad, b) == pytest.approx(expected)
