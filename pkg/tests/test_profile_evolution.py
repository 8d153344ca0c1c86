import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mkdvlab import profile_evolution as pe
from mkdvlab import selfsimilar_profile as sp
from mkdvlab.errors import AliasingDetected, StepRejected

C = pe.DEFAULT_COUPLING


def gauss(xi, c=0.0, w=1.0, a=1.0):
    return a * np.exp(-(xi - c) ** 2 / (2 * w**2))


def herm(xi, rng, k=3):
    v = np.zeros(len(xi), dtype=complex)
    for _ in range(k):
        c, a = rng.normal(), rng.normal() + 1j * rng.normal()
        v += a * gauss(xi, c) + np.conj(a) * gauss(xi, -c)
    return v


@pytest.fixture(scope="module")
def small_profile():
    cfg = sp.SelfSimilarConfig(A=0.3, B=0.1, a=sp.log_phase_from_amplitude(0.3), sreg_c=0.05, sreg_jump=0.02)
    return sp.fourier_profile_model(cfg)


def test_grid_is_staggered_and_symmetric():
    xi = pe.make_grid(64, 8.0)
    assert len(xi) == 64
    assert np.min(np.abs(xi)) == pytest.approx(0.125)
    np.testing.assert_allclose(xi, -xi[::-1], atol=1e-15)
    with pytest.raises(ValueError):
        pe.make_grid(63, 8.0)


def test_apply_N_zero():
    xi = pe.make_grid(32, 4.0)
    z = pe.ProfileGrid(xi, np.zeros(32, complex))
    assert np.all(pe.apply_N(z, z, z, 0.3).values == 0)


def test_apply_N_gaussian_closed_form():
    # e^{-x^2/2} convolved three times is (2 pi / sqrt 3) e^{-x^2/6}
    xi = pe.make_grid(256, 16.0)
    g = pe.ProfileGrid(xi, gauss(xi).astype(complex))
    out = pe.apply_N(g, g, g, 0.0).values
    ref = xi * 2 * np.pi / np.sqrt(3) * np.exp(-xi**2 / 6)
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-4


def gl_oracle(fs, xi, t, R=9.0, n=360):
    """Tensor Gauss-Legendre quadrature of xi * iint e^{it Phi} f g h over [-R, R]^2."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = R * x, R * w
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    out = np.empty(len(xi), complex)
    f, g, h = fs
    F1, F2 = f(X1), g(X2)
    for m, s in enumerate(xi):
        X3 = s - X1 - X2
        ph = np.exp(1j * t * (s**3 - X1**3 - X2**3 - X3**3))
        out[m] = s * np.sum(W * ph * F1 * F2 * h(X3))
    return out


def random_smooth(rng):
    c, wd = rng.uniform(-1.5, 1.5), rng.uniform(0.7, 1.3)
    a = rng.normal() + 1j * rng.normal()
    return lambda x: a * np.exp(-(x - c) ** 2 / (2 * wd**2))


@pytest.mark.parametrize("seed", range(5))
def test_apply_N_matches_quadrature_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    xi = pe.make_grid(64, 10.0)
    fs = [random_smooth(rng) for _ in range(3)]
    t = rng.uniform(0.0, 0.02)
    grids = [pe.ProfileGrid(xi, f(xi)) for f in fs]
    out = pe.apply_N(*grids, t).values
    ref = gl_oracle(fs, xi, t)
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-4


def test_fft_route_equals_direct_sum():
    rng = np.random.default_rng(3)
    xi = pe.make_grid(48, 6.0)
    f, g, h = (pe.ProfileGrid(xi, rng.normal(size=48) + 1j * rng.normal(size=48)) for _ in range(3))
    for t in (0.0, 0.1, 1.0):
        a = pe.apply_N(f, g, h, t).values
        b = pe.direct_N(f, g, h, t)
        assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 2.0))
def test_hermitian_inputs_give_real_nonlinearity(seed, t):
    xi = pe.make_grid(64, 8.0)
    u = pe.ProfileGrid(xi, herm(xi, np.random.default_rng(seed)))
    assert u.is_hermitian(1e-14)
    out = pe.ProfileGrid(xi, C * pe.apply_N(u, u, u, t).values)
    assert out.hermitian_defect() <= 1e-10 * (1 + np.max(np.abs(out.values)))


def test_aliasing_detection():
    xi = pe.make_grid(64, 8.0)
    edge = pe.ProfileGrid(xi, gauss(xi, 7.5, 0.5) + gauss(xi, -7.5, 0.5))
    with pytest.raises(AliasingDetected) as ei:
        pe.apply_N(edge, edge, edge, 0.0, alias_tol=0.01)
    assert ei.value.fraction > 0.01
    core = pe.ProfileGrid(xi, gauss(xi, 0.0, 0.5).astype(complex))
    pe.apply_N(core, core, core, 0.0, alias_tol=0.01)


def test_cutoff_family():
    xi = pe.make_grid(512, 64.0)
    for n in (2, 8, 32):
        cf = pe.CutoffFamily(n)
        chi = cf.chi(xi)
        assert np.all(chi[np.abs(xi) <= n] == 1.0)
        assert np.all((chi > 0) & (chi <= 1))
        assert cf.ratio_constant(xi) <= 3.0
        r = np.abs(xi)
        order = np.argsort(r)
        assert np.all(np.diff(chi[order]) <= 1e-15)
    # derivative agrees with finite differences, including across the spline joints
    cf = pe.CutoffFamily(4.0)
    x = np.linspace(3.0, 13.0, 2001)
    h = 1e-6
    fd = (cf.chi(x + h) - cf.chi(x - h)) / (2 * h)
    np.testing.assert_allclose(fd, cf.dchi(x), atol=1e-7)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20), st.floats(1e-4, 0.99))
def test_domains_are_exact_complements(xi, x1, x2, tau):
    d = pe.DomainDecomposition(tau)
    assert bool(d.D1(xi, x1, x2)) != bool(d.D2(xi, x1, x2))
    assert bool(d.D3(xi, x1, x2)) != bool(d.D4(xi, x1, x2))
    # D4 is empty beyond |xi| = tau^{-1/3}
    if abs(xi) > d.r3:
        assert not d.D4(xi, x1, x2)


def test_source_pieces_vanish_without_z(small_profile):
    xi = pe.make_grid(32, 6.0)
    z = pe.ProfileGrid(xi, np.zeros(32, complex))
    P = pe.assemble_pieces(small_profile, z, 0.1)
    for piece in (P.F11, P.F12, P.F2, P.L_K_Dtau):
        assert np.all(piece(0.05) == 0)


def test_decomposition_identity(small_profile):
    rng = np.random.default_rng(11)
    xi = pe.make_grid(48, 8.0)
    z = pe.ProfileGrid(xi, 0.1 * herm(xi, rng))
    w = pe.ProfileGrid(xi, 0.05 * herm(xi, rng))
    t, tau = 0.02, 0.05
    P = pe.assemble_pieces(small_profile, z, tau)
    s = small_profile.at(t, xi)
    v = pe.ProfileGrid(xi, s + z.values + w.values)
    sg = pe.ProfileGrid(xi, s)
    ref = pe.apply_N(v, v, v, t).values - pe.apply_N(sg, sg, sg, t).values
    tot = P.total(w, t)
    assert np.max(np.abs(tot - ref)) <= 1e-6 * np.max(np.abs(ref))


def test_f2_d4_part_empty_at_high_frequency(small_profile):
    xi = pe.make_grid(48, 8.0)
    tau = 0.05
    T = pe.triple_sum(xi)
    d = pe.DomainDecomposition(tau)
    m4 = d.D4(T.X, T.X1, T.X2) & T.valid
    hi = np.abs(xi) > d.r3
    assert not np.any(m4[hi])


def test_binary_kernel_reproduces_trilinear_form(small_profile):
    rng = np.random.default_rng(5)
    xi = pe.make_grid(64, 8.0)
    t = 0.3
    s0 = small_profile.s0_at(t, xi)
    w = herm(xi, rng)
    eta, K = pe.discrete_K(s0, xi, t)
    d = xi[1] - xi[0]
    psi = -0.75 * eta[None, :] * (eta[None, :] - 2 * xi[:, None]) ** 2
    idx = np.arange(len(xi))[:, None] - np.round(eta / d).astype(int)[None, :]
    ok = (idx >= 0) & (idx < len(xi))
    wv = np.where(ok, w[np.clip(idx, 0, len(xi) - 1)], 0)
    binary = xi * d * np.sum(np.exp(-1j * t * psi) * wv * K[None, :], axis=1)
    tri = pe.direct_N(s0, s0, w, t, xi=xi)
    assert np.max(np.abs(binary - tri)) <= 1e-11 * np.max(np.abs(tri))


def test_zero_data_stays_zero(small_profile):
    xi = pe.make_grid(32, 6.0)
    w = pe.ProfileGrid(xi, np.zeros(32, complex))
    z = np.zeros(32, complex)
    out = pe.step_wn(w, small_profile, z, pe.CutoffFamily(3), 0.01, 1e-3)
    assert np.all(out.values == 0)
    lw = pe.step_lambda_wn(w, w, small_profile, z, pe.CutoffFamily(3), 0.01, 1e-3)
    assert np.all(lw.values == 0)


def test_step_rejects_non_finite(small_profile):
    xi = pe.make_grid(32, 6.0)
    w = pe.ProfileGrid(xi, np.full(32, np.nan, complex))
    with pytest.raises(StepRejected):
        pe.step_wn(w, small_profile, np.zeros(32), None, 0.01, 1e-3)


def _full_run(u0, dt, t1=0.2):
    return pe.evolve_full(u0, 0.0, t1, dt)[0].values


def test_rk4_fourth_order():
    xi = pe.make_grid(64, 8.0)
    u0 = pe.ProfileGrid(xi, herm(xi, np.random.default_rng(2)) * 0.5)
    ref = _full_run(u0, 1e-3 / 8)
    errs = [np.max(np.abs(_full_run(u0, dt) - ref)) for dt in (4e-3, 2e-3)]
    order = np.log2(errs[0] / errs[1])
    assert 3.5 < order < 4.6


def test_mass_conservation_localized():
    xi = pe.make_grid(128, 10.0)
    u0 = pe.ProfileGrid(xi, 0.5 * (gauss(xi, 1.0) + gauss(xi, -1.0)) * (1 + 0j))
    _, mass = pe.evolve_full(u0, 1.0, 2.0, 5e-4)
    assert abs(mass[-1] - mass[0]) / mass[0] < 1e-6


def test_lambda_reduces_to_derivative_at_t0():
    xi = pe.make_grid(256, 8.0)
    w = pe.ProfileGrid(xi, gauss(xi, 0.5).astype(complex))
    out = pe.lambda_apply(w, np.ones(256), 0.0).values
    np.testing.assert_allclose(out, -(xi - 0.5) * gauss(xi, 0.5), atol=1e-5)


def test_lambda_annihilates_self_similar_profile():
    cfg = sp.SelfSimilarConfig(A=0.05, B=0.01, a=sp.log_phase_from_amplitude(0.05), sreg_c=0.02)
    S = sp.fourier_profile_model(cfg)
    xi = pe.make_grid(8192, 4.0)
    t = 0.5
    w = pe.ProfileGrid(xi, S.at(t, xi))
    dtw = S.dt_s0_at(t, xi) + S.dt_sreg_at(t, xi)
    val = xi * pe.lambda_apply(w, dtw, t).values
    inner = (np.abs(xi) > 0.05) & (np.abs(xi) < 3.9)
    assert np.max(np.abs(val[inner])) < 1e-6


def test_commutator_of_dt_and_lambda():
    # u(t, xi) = e^{-t xi^2} sin(xi): [d_t, Lambda] u = -(3/xi) d_t u
    xi = pe.make_grid(4096, 4.0)
    u = lambda t: np.exp(-t * xi**2) * np.sin(xi)
    ut = lambda t: -xi**2 * u(t)
    utt = lambda t: xi**4 * u(t)
    lam = lambda t: pe.lambda_apply(pe.ProfileGrid(xi, u(t) + 0j), ut(t), t).values
    t, h = 0.3, 1e-4
    dt_lam = (lam(t + h) - lam(t - h)) / (2 * h)
    lam_dt = pe.d_xi(ut(t), xi) - 3 * t / xi * utt(t)
    comm = dt_lam - lam_dt
    ref = -3 / xi * ut(t)
    m = np.abs(xi) < 3.5
    assert np.max(np.abs(comm - ref)[m]) <= 1e-4 * np.max(np.abs(ref[m]))


def test_lambda_source_vanishes_without_perturbation(small_profile):
    xi = pe.make_grid(64, 8.0)
    zero = np.zeros(64, complex)
    out = pe.rhs_lambda(zero, pe.ProfileGrid(xi, zero), small_profile, zero, pe.CutoffFamily(4), 0.1)
    assert np.all(out == 0)


def test_lambda_evolution_matches_operator():
    cfg = pe.ExperimentConfig(N=256, Xi=16.0, n_cutoff=8, dt=2e-5, t_start=0.01, T=0.02,
                              S_spec={"A": 0.04, "B": 0.002, "sreg_c": 0.01},
                              z_spec={"kind": "gaussian", "amplitude": 0.5})
    r = pe.run_experiment(cfg)
    xi = r.w.xi
    S = pe.make_S(cfg.S_spec)
    z = pe.make_z(xi, cfg.z_spec)
    dtw = pe.rhs_w(r.w, S, z, pe.CutoffFamily(8), cfg.T)
    lam = pe.lambda_apply(r.w, dtw, cfg.T).values
    inner = np.abs(xi) < 12
    assert np.max(np.abs(lam - r.lw.values)[inner]) <= 1e-3 * np.max(np.abs(lam[inner]))


def test_weighted_norms():
    xi = pe.make_grid(128, 10.0)
    mu = 0.3
    w = pe.ProfileGrid(xi, pe.jap(xi) ** (-mu) + 0j)
    row = pe.weighted_norms(w, np.zeros(128), np.zeros(128), mu, 0.5)
    assert row["norm_w"] == pytest.approx(1.0, rel=1e-14)
    zero = pe.weighted_norms(np.zeros(128), np.zeros(128), pe.ProfileGrid(xi, np.zeros(128, complex)), mu, 0.5)
    assert all(v == 0 for v in zero.values())
    rng = np.random.default_rng(0)
    a, b, c = (rng.normal(size=128) + 1j * rng.normal(size=128) for _ in range(3))
    row = pe.weighted_norms(pe.ProfileGrid(xi, a), b, c, mu, 0.5)
    wt = (1 + xi**2) ** (mu / 2)
    assert row["norm_w"] == pytest.approx(max(wt[i] * abs(a[i]) for i in range(128)), rel=1e-14)
    assert row["norm_dxw"] == pytest.approx(max(wt[i] * abs(c[i]) for i in range(128)), rel=1e-14)
    assert row["norm_tdtw_over_xi"] == pytest.approx(max(wt[i] * abs(0.5 / xi[i] * b[i]) for i in range(128)))


def test_run_experiment_zero_perturbation(tmp_path):
    cfg = pe.ExperimentConfig(N=64, Xi=8.0, n_cutoff=4, dt=1e-3, t_start=1e-3, T=0.01,
                              z_spec={"kind": "zero"})
    r = pe.run_experiment(cfg)
    for k in ("norm_w", "norm_dxw", "norm_tdtw_over_xi", "norm_lambda_w"):
        assert all(v == 0 for v in getattr(r.tracker, k))
    r.tracker.to_csv(tmp_path / "n.csv")
    assert (tmp_path / "n.csv").read_text().splitlines()[0] == "t,norm_w,norm_dxw,norm_tdtw_over_xi,norm_lambda_w"


def test_cutoff_limit_is_cauchy():
    # fixed data, growing n: successive differences of the final w shrink
    base = dict(N=256, Xi=16.0, dt=1e-4, t_start=1e-3, T=0.02, track_lambda=False,
                S_spec={"A": 0.04, "B": 0.002, "sreg_c": 0.01},
                z_spec={"kind": "gaussian", "amplitude": 0.05, "width": 3.0})
    finals = [pe.run_experiment(pe.ExperimentConfig(n_cutoff=n, **base)).w.values for n in (2, 4, 8)]
    xi = pe.make_grid(256, 16.0)
    wt = pe.jap(xi) ** 0.3
    d1 = np.max(wt * np.abs(finals[1] - finals[0]))
    d2 = np.max(wt * np.abs(finals[2] - finals[1]))
    assert d2 < d1


def test_rhs_converges_to_profile_time_derivative(exact_profile):
    # the semi-discrete RHS approaches d_t S once the grid resolves the profile content
    res = []
    for N in (1024, 4096):
        xi = pe.make_grid(N, 16.0)
        m = np.abs(xi) < 5
        h = 1e-4
        dS = (exact_profile.at(1 + h, xi[m]) - exact_profile.at(1 - h, xi[m])) / (2 * h)
        u = pe.ProfileGrid(xi, exact_profile.at(1.0, xi))
        res.append(np.max(np.abs(dS - C * pe.apply_N(u, u, u, 1.0).values[m])))
    assert res[1] < 0.05 * res[0]
    assert res[1] < 0.02 * np.max(np.abs(dS))
