import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from tentspde import heat, parabolic, spde, stochastic
from tentspde.criteria import HOLDER_C, holder_corpus, manufactured_residual, stochastic_residual
from tentspde.grid import GridSpec, SpaceField, SpaceTimeField


def _bump1(x, c, r):
    rho2 = ((x - c) / r) ** 2
    return np.where(rho2 < 1, np.exp(-1 / np.where(rho2 < 1, 1 - rho2, 1.0)), 0.0)


# -------------------------------------------------------------- assembly


def test_zero_data_zero_solution():
    g = GridSpec(1, 16, 16)
    a = parabolic.sample_coefficients(g, "checkerboard", seed=0)
    W = stochastic.sample_bm(g, 2, 0)
    b = spde.assemble_solution(a, SpaceField.zeros(g), None, None, W)
    assert np.all(b.U.values == 0) and np.all(b.grad_U.values == 0)
    phi = spde.bump_test_function(g, (0.5,), 0.3)
    assert spde.pw_residual(b, phi) == 0.0


def test_identity_coefficients_superposition(rng):
    g = GridSpec(2, 16, 16, 1.0, 0.05)
    psi = SpaceField(g, spde.band_limited(g, rng, 3))
    F = SpaceTimeField(g, rng.standard_normal((16, 16, 16, 2)))
    a = parabolic.identity_coefficients(g)
    b = spde.assemble_solution(a, psi, F, None, stochastic.sample_bm(g, 1, 0))
    forced = parabolic.solve_cauchy(a, SpaceField.zeros(g), F).values[..., 0]
    for m in (1, 7, 16):
        expected = heat.heat_apply(g.times[m - 1], psi).scalar() + forced[m - 1]
        assert np.allclose(b.U.values[m - 1, ..., 0], expected, atol=1e-9)


def test_simple_process_integrand(rng):
    g = GridSpec(1, 16, 16)
    ev = stochastic.Event(lambda w: True, np.ones(16), np.array([1.0]))
    proc = stochastic.SimpleAdaptedProcess(g, 1, (0, 16), ((ev,),))
    W = stochastic.sample_bm(g, 1, 4)
    b = spde.assemble_solution(parabolic.identity_coefficients(g), SpaceField.zeros(g), None, proc, W)
    # constant-in-space noise: V1 = W(t) and the gradient vanishes
    assert np.allclose(b.U.values[:, :, 0], W.paths[1:, :1], atol=1e-12)
    assert np.allclose(b.I_g.values, b.U.values, atol=1e-12)


def test_gradient_second_moment_matches_half_identities():
    # a = I, F = 0: E|∇U|² = sum_m dt |∇e^{t_mΔ}ψ|² + |Q g|², the cross term has mean zero
    g = GridSpec(1, 32, 32, 1.0, 0.1)
    a = parabolic.factorize(parabolic.identity_coefficients(g))
    gaps = []
    for i in range(300):
        d = spde.draw_data(g, 3, stochastic.sample_seed(21, i), F_scale=0.0)
        b = spde.assemble_solution(a, d.psi, d.F, d.g, d.W)
        predicted = heat.half_identity(d.psi).time_sum + stochastic.l2_squared(heat.q_operator(d.g))
        gaps.append(stochastic.l2_squared(b.grad_U) - predicted)
    st = stochastic.EnsembleStat.of("gap", gaps)
    assert abs(st.mean) <= 3 * st.stderr


# -------------------------------------------------------- test functions


def test_bump_derivatives_match_finite_differences():
    errs = []
    for N in (256, 512):
        g = GridSpec(1, N, N, 1.0, 0.5)
        phi = spde.bump_test_function(g, (0.4,), 0.25, omega=4.0, phase=0.3)
        dt_fd = np.diff(phi.phi, axis=0) / g.dt
        mid = 0.5 * (phi.dphi[1:] + phi.dphi[:-1])
        dx_fd = (np.roll(phi.phi, -1, axis=1) - np.roll(phi.phi, 1, axis=1)) / (2 * g.dx)
        errs.append((np.abs(dt_fd - mid).max() / np.abs(mid).max(),
                     np.abs(dx_fd - phi.grad[..., 0]).max() / np.abs(phi.grad).max()))
    # centred differences: both errors fall by about four per halving
    (t0, x0), (t1, x1) = errs
    assert t1 < 1e-3 and x1 < 5e-3
    assert t0 / t1 > 3.5 and x0 / x1 > 3.5
    with pytest.raises(ValueError, match="seam"):
        spde.bump_test_function(g, (0.1,), 0.2)


def test_phi_norm_zero_and_range():
    g = GridSpec(1, 16, 16)
    z = spde.zero_test_function(g)
    assert spde.phi_norm(z, 2.0) == 0
    with pytest.raises(ValueError):
        spde.phi_norm(z, 1.0)
    assert spde.holder_half_check(z, 2.0).ratio == 0.0


def test_separable_phi_norm_matches_quadrature():
    # for p >= 2 the E^p norm is vertical, so each term factorises into L2 in time times L^p in space
    g = GridSpec(1, 512, 512, 1.0, 0.5)
    omega, c, r, p = 3.0, 0.5, 0.3, 3.0
    phi = spde.bump_test_function(g, (c,), r, omega=omega)
    f2 = integrate.quad(lambda t: np.cos(omega * t) ** 2, 0, g.T_max)[0]
    df2 = integrate.quad(lambda t: (omega * np.sin(omega * t)) ** 2, 0, g.T_max)[0]
    chi_p = integrate.quad(lambda x: _bump1(x, c, r) ** p, c - r, c + r)[0] ** (1 / p)

    def dchi(x):
        s = 1 - ((x - c) / r) ** 2
        return _bump1(x, c, r) * 2 * (x - c) / r**2 / s**2

    dchi_p = integrate.quad(lambda x: abs(dchi(x)) ** p, c - r, c + r, limit=200)[0] ** (1 / p)
    oracle = np.sqrt(f2) * chi_p + np.sqrt(df2) * chi_p + np.sqrt(f2) * dchi_p
    assert spde.phi_norm(phi, p) == pytest.approx(oracle, rel=0.02)


def test_holder_ratio_bounded_and_stable():
    per_grid = []
    for N in (64, 128):
        g = GridSpec(1, N, N, 1.0, 0.25)
        per_grid.append(max(spde.holder_half_check(phi, p).ratio
                            for phi in holder_corpus(g, 20, 3) for p in (1.5, 2.0, 3.0)))
    assert max(per_grid) <= HOLDER_C
    assert max(per_grid) / min(per_grid) <= 2.0


# ------------------------------------------------------------ residuals


def test_manufactured_residual_converges():
    res = [manufactured_residual(N, 0) for N in (32, 64, 128)]
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(rates >= 0.8)


def test_stochastic_residual_drops():
    means = [stochastic_residual(N, 20, 1).mean for N in (32, 64)]
    assert means[0] / means[1] >= 1.7


# ------------------------------------------------------------------ data


@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2]), st.integers(1, 4))
def test_band_limited_spectrum(seed, n, kmax):
    g = GridSpec(n, 16, 8)
    v = spde.band_limited(g, np.random.default_rng(seed), kmax)
    spec = np.abs(np.fft.fftn(v))
    k = np.abs(np.fft.fftfreq(16, 1 / 16))
    grids = np.meshgrid(*([k] * n), indexing="ij")
    outside = np.zeros(spec.shape, bool)
    for kk in grids:
        outside |= kk > kmax
    assert abs(v.mean()) < 1e-12
    assert spec[outside].max(initial=0.0) < 1e-9


def test_draw_data_is_reproducible():
    g = GridSpec(1, 16, 16)
    a = spde.draw_data(g, 2, stochastic.sample_seed(3, 1))
    b = spde.draw_data(g, 2, stochastic.sample_seed(3, 1))
    assert np.array_equal(a.g.values, b.g.values) and np.array_equal(a.W.increments, b.W.increments)


# ------------------------------------------------------ solution estimate


def test_maxreg_degenerate_on_zero_data():
    g = GridSpec(1, 16, 16)
    zero = lambda grid, K, s: spde.DataSample(SpaceField.zeros(grid), SpaceTimeField.zeros(grid, 1),
                                              SpaceTimeField.zeros(grid, K), stochastic.sample_bm(grid, K, s))
    rep = spde.maxreg_ratio(parabolic.identity_coefficients(g), 2.0, 3, 0, K=2, data=zero)
    assert rep.degenerate and rep.ratios == ()


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_maxreg_ratio_refinement_stable(p):
    ratios = []
    for g in (GridSpec(1, 32, 32, 1.0, 0.1), GridSpec(1, 64, 64, 1.0, 0.1)):
        a = parabolic.sample_coefficients(g, "checkerboard", 0.5, 2.0, cellsize=g.L / 8, seed=0)
        rep = spde.maxreg_ratio(a, p, 10, 5, K=2)
        assert all(np.isfinite(rep.ratios))
        assert rep.spread <= 2.0
        ratios.append(rep.ratios[-1])
    assert max(ratios) / min(ratios) <= 2.0


def test_norm_report_keys():
    g = GridSpec(1, 16, 16)
    d = spde.draw_data(g, 2, 0)
    b = spde.assemble_solution(parabolic.identity_coefficients(g), d.psi, d.F, d.g, d.W)
    rep = b.norm_report(2.0)
    assert set(rep) == {"psi", "F", "g", "grad_U", "U_trunc"} and all(np.isfinite(list(rep.values())))
