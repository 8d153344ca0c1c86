import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from mkdvlab import freq_restricted as fr
from mkdvlab import phase_geometry as pg
from mkdvlab.errors import InsufficientLadder, TruncationDominates

SMALL = fr.SamplerConfig(n_samples=20_000)
FAST = fr.GridSearchConfig(n_xi=8, sampler=SMALL)


def close_mc(value, err, ref):
    # zero-variance cells (indicator constant on the domain) only carry roundoff
    return abs(value - ref) <= 3 * err + 1e-12 * (1 + abs(ref))


# ---------------------------------------------------------------- elementary integrals

def test_posdef_annulus_closed_form():
    assert fr.quad_reference("QUAD_POSDEF", 0.0, 0.25) == pytest.approx(math.pi * 0.25, rel=1e-15)
    v, e = fr.sublevel_integral(fr.EstimateSpec("QUAD_POSDEF"), 0, 0.0, 0.25)
    assert close_mc(v, e, math.pi * 0.25)


def test_square_closed_form():
    assert fr.quad_reference("QUAD_SQUARE", 0.0, 0.04) == pytest.approx(0.4, rel=1e-15)
    v, e = fr.sublevel_integral(fr.EstimateSpec("QUAD_SQUARE"), 0, 0.0, 0.04)
    assert close_mc(v, e, 0.4)


@pytest.mark.parametrize("alpha,M", [(0.0, 0.01), (0.5, 0.25), (2.0, 1.0), (0.3, 0.05)])
def test_singular_closed_form_matches_quadrature(alpha, M):
    f = lambda q: abs(q) ** -0.5
    lo, hi = alpha - M, alpha + M
    pts = [0.0] if lo < 0 < hi else None
    ref = integrate.quad(f, lo, hi, points=pts, limit=200)[0]
    assert fr.quad_reference("QUAD_SINGULAR", alpha, M) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("alpha,M", [(0.0, 0.01), (0.1, 0.05), (0.3, 0.25), (2.0, 1.0)])
def test_indefinite_reference_against_grid(alpha, M):
    n = 2000
    q = (np.arange(n) + 0.5) / n * 2 - 1
    Q1, Q2 = np.meshgrid(q, q, indexing="ij")
    inside = (Q1**2 + Q2**2 < 1) & (np.abs(Q1 * Q2 - alpha) < M)
    grid = inside.sum() * (2 / n) ** 2
    assert fr.quad_reference("QUAD_INDEF", alpha, M) == pytest.approx(grid, abs=3e-3)


@pytest.mark.parametrize("sid", fr.QUAD_IDS)
def test_elementary_monte_carlo_within_stderr(sid):
    spec = fr.EstimateSpec(sid)
    for alpha in (0.0, 0.5, 2.0):
        for M in (0.01, 0.25, 1.0, 10.0):
            v, e = fr.sublevel_integral(spec, 0, alpha, M, SMALL)
            assert close_mc(v, e, fr.quad_reference(sid, alpha, M))


def test_elementary_bounds_shape():
    # min(1, M), min(1, M|ln M|), M^(1-delta), min(1, sqrt M) up to constants
    for M in (1e-3, 1e-2, 0.1):
        assert fr.quad_reference("QUAD_POSDEF", 0.3, M) <= 7 * M
        assert fr.quad_reference("QUAD_INDEF", 0.0, M) <= 8 * M * abs(math.log(M))
        assert fr.quad_reference("QUAD_SINGULAR", 0.0, M) <= 4 * M**0.5
        assert fr.quad_reference("QUAD_SQUARE", 0.0, M) <= 2 * math.sqrt(M)


# ---------------------------------------------------------------- Phi sublevel sets

@settings(max_examples=60, deadline=None)
@given(xi=st.floats(-20, 20), s=st.floats(-50, 50), alpha=st.floats(-500, 500),
       M=st.floats(1, 100), r=st.floats(0.001, 0.999))
def test_phi_intervals_lie_in_the_sublevel_set(xi, s, alpha, M, r):
    oa, ob = fr._sublevel_intervals(xi, np.array([s]), alpha, M)
    oa, ob = oa[0], ob[0]
    if ob - oa <= 1e-9 * (1 + abs(xi) + abs(s)):
        return
    o = oa + r * (ob - oa)
    for x2 in (xi - o, -s + o):
        assert abs(pg.phi(xi, s, x2) - alpha) <= M * (1 + 1e-6) + 1e-9 * (1 + abs(s) + abs(xi)) ** 3


def test_phi_interval_length_matches_brute_force():
    xi, alpha, M = 1.3, 2.0, 5.0
    for s in (-7.0, -1.0, 0.4, 2.5, 9.0):
        oa, ob = fr._sublevel_intervals(xi, np.array([s]), alpha, M)
        x2 = np.linspace(-60, 60, 2_000_001)
        meas = np.sum(np.abs(pg.phi(xi, s, x2) - alpha) < M) * (x2[1] - x2[0])
        assert 2 * (ob[0] - oa[0]) == pytest.approx(meas, abs=2e-4)


def test_phi_sublevel_far_tail_has_no_cancellation():
    # |xi1| ~ 1e12: the interval width ~ M / xi1^2 survives
    oa, ob = fr._sublevel_intervals(1.0, np.array([1e12]), 0.0, 1.0)
    assert ob[0] - oa[0] == pytest.approx(2 / (3 * 1e24), rel=1e-6)


def test_saturated_indicator_equals_box_integral():
    # M huge on a truncated box: the indicator is identically one
    spec = fr.EstimateSpec("FRE_PHI")
    v, e = fr.sublevel_integral(spec, 0.0, 0.0, 1e9, fr.SamplerConfig(R=10.0, tail_check=False))
    x, w = np.polynomial.legendre.leggauss(400)
    X, W = 10 * x, 10 * w
    X1, X2 = np.meshgrid(X, X, indexing="ij")
    big = np.maximum(np.maximum(np.abs(X1), np.abs(X2)), np.abs(X1 + X2))
    ref = np.einsum("i,j,ij", W, W, big / (fr.jap(X1) ** 0.3 * fr.jap(X2) ** 0.3))
    assert close_mc(v, e, ref)


def test_truncation_dominates():
    spec = fr.EstimateSpec("FRE_PHI")
    with pytest.raises(TruncationDominates) as ex:
        fr.sublevel_integral(spec, 0.0, 0.0, 1.0, fr.SamplerConfig(R=10.0))
    assert ex.value.tail > 0.05 * ex.value.value


def _nested_quadrature(spec, xi, alpha, M, band):
    """Independent route: exact roots in xi2 by np.roots, adaptive quad in both variables."""
    mu = spec.params.mu

    def m(x1, x2):
        x3 = xi - x1 - x2
        return fr.jap(xi) ** mu * max(abs(x1), abs(x2), abs(x3)) / (fr.jap(x1) ** mu * fr.jap(x2) ** mu)

    def inner(s):
        c = 3 * (xi - s)
        roots = []
        for lev in (alpha - M, alpha + M):
            rr = np.roots([-c, c * (xi - s), c * s * xi - lev])
            roots += [r.real for r in rr if abs(r.imag) < 1e-12]
        roots = sorted(roots)
        if not roots:
            return 0.0
        pts = [roots[0] - 1] + roots + [roots[-1] + 1]
        tot = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            if abs(pg.phi(xi, s, 0.5 * (a + b)) - alpha) < M:
                br = sorted({a, b} | {p for p in (s, -s, (xi - s) / 2, xi - 2 * s, xi, 0.0) if a < p < b})
                for lo, hi in zip(br[:-1], br[1:]):
                    tot += integrate.quad(lambda x: m(s, x), lo, hi, epsrel=1e-10)[0]
        return tot

    tot = 0.0
    for sgn in (1, -1):
        ed = np.geomspace(band[0], band[1], 12)
        for a, b in zip(ed[:-1], ed[1:]):
            lo, hi = sorted((xi + sgn * a, xi + sgn * b))
            tot += integrate.quad(inner, lo, hi, limit=200, epsrel=1e-9)[0]
    return tot


def test_phi_conditional_mc_against_nested_quadrature():
    spec = fr.EstimateSpec("FRE_PHI")
    xi, alpha, M = 1.0, 0.0, 1.0
    band = (1.0, 10.0)
    ref = _nested_quadrature(spec, xi, alpha, M, band)
    v, e, _ = fr._phi_sample(spec, xi, alpha, M, fr.SamplerConfig(n_samples=400_000),
                             restrict_outer=lambda s: (np.abs(s - xi) >= band[0]) & (np.abs(s - xi) < band[1]))
    assert abs(v - ref) <= 4 * e


@pytest.mark.parametrize("sid,kw", [("FRE_PHI", {}), ("FRE_PHI_XI", {}), ("SOURCE_PHI_D3", {"tau": 1e-3}),
                                    ("SOURCE_SREG_D1", {"tau": 1e-3, "t": 1e-3}), ("FRE_PSI", {}),
                                    ("SOURCE_PSI_DTAU", {"tau": 1e-3})])
def test_monotone_in_M(sid, kw):
    spec = fr.EstimateSpec(sid, **kw)
    for xi, alpha in ((0.5, 0.0), (3.0, 24.0), (-12.0, 100.0)):
        a, ea = fr.sublevel_integral(spec, xi, alpha, 1.0, SMALL)
        b, eb = fr.sublevel_integral(spec, xi, alpha, 4.0, SMALL)
        assert b >= a - 3 * (ea + eb)


def test_D4_empty_for_large_xi():
    tau = 1e-3
    spec = fr.EstimateSpec("SOURCE_PHI_D3", tau=tau, domain="D4")
    xi = 2 * tau ** (-1 / 3)
    assert fr.sublevel_integral(spec, xi, 0.0, 10.0, SMALL) == (0.0, 0.0)
    # nonempty below the threshold
    v, _ = fr.sublevel_integral(spec, 0.5, 0.0, 10.0, SMALL)
    assert v > 0


def test_D1_and_D2_partition():
    tau = 1e-3
    base = fr.EstimateSpec("SOURCE_SREG_D1", tau=tau, t=1e-3)
    parts = [fr.sublevel_integral(fr.EstimateSpec("SOURCE_SREG_D1", tau=tau, t=1e-3, domain=d), 2.0, 1.0, 10.0, SMALL)
             for d in ("D1", "D2")]
    whole = fr._phi_sample(fr.EstimateSpec("SOURCE_SREG_D1", tau=tau, t=1e-3, domain=None), 2.0, 1.0, 10.0, SMALL)
    assert base.domain == "D1"
    # same random stream per cell, so the split is exact
    assert parts[0][0] + parts[1][0] == pytest.approx(whole[0], rel=1e-12)


# ---------------------------------------------------------------- Psi integrals

@settings(max_examples=50, deadline=None)
@given(xi=st.floats(-10, 10), alpha=st.floats(-300, 300), M=st.floats(1, 50))
def test_psi_intervals_exact(xi, alpha, M):
    ivs = fr._psi_level_intervals(xi, alpha, M)
    for a, b in ivs:
        for r in (0.01, 0.5, 0.99):
            e = a + r * (b - a)
            assert abs(pg.psi(xi, e) - alpha) < M * (1 + 1e-6)
    # total length against a brute-force scan
    lo = min([a for a, _ in ivs], default=-1.0) - 1
    hi = max([b for _, b in ivs], default=1.0) + 1
    eta = np.linspace(lo, hi, 400_001)
    meas = np.sum(np.abs(pg.psi(xi, eta) - alpha) < M) * (eta[1] - eta[0])
    assert sum(b - a for a, b in ivs) == pytest.approx(meas, abs=5 * (eta[1] - eta[0]))


def test_psi_integral_against_brute_force():
    spec = fr.EstimateSpec("FRE_PSI")
    xi, alpha, M = 1.5, 0.3, 2.0
    v, e = fr.sublevel_integral(spec, xi, alpha, M)
    # substitution eta = sgn(u) u^2 removes the inverse square root
    u = np.linspace(-6, 6, 4_000_001)
    eta = np.sign(u) * u**2
    ind = np.abs(pg.psi(xi, eta) - alpha) < M
    m = np.maximum(abs(xi), np.abs(eta)) * fr.jap(xi) ** 0.3 / fr.jap(xi - eta) ** 0.3
    brute = np.sum(ind * m * 2) * (u[1] - u[0])
    assert v == pytest.approx(brute, rel=1e-4)
    assert e < 1e-6 * v


def test_psi_sup_near_stationary_point():
    spec = fr.EstimateSpec("FRE_PSI")
    sup, w = fr.estimate_sup(spec, 1.0, FAST)
    xi, alpha = w[0], w[1]
    assert np.isfinite(sup) and 0 < sup < 100
    assert 0.3 < abs(xi) < 5
    ivs = fr._psi_level_intervals(xi, alpha, 1.0)
    assert any(a - 0.5 <= 2 * xi <= b + 0.5 for a, b in ivs)


def test_dtau_restriction_inactive_for_large_xi():
    tau = 1e-3
    r = tau ** (-1 / 3)
    a = fr.sublevel_integral(fr.EstimateSpec("SOURCE_PSI_DTAU", tau=tau), r, 0.0, 5.0)[0]
    b = fr.sublevel_integral(fr.EstimateSpec("SOURCE_PSI_DTAU", tau=1.0), r, 0.0, 5.0)[0]
    assert a == pytest.approx(b, rel=1e-10)


# ---------------------------------------------------------------- ladders and fits

def test_fit_exponent_exact_power():
    Ms = [1, 10, 100, 1000, 1e4]
    assert fr.fit_exponent([(M, 3 * M**0.9) for M in Ms]) == pytest.approx(0.9, abs=1e-6)


def test_fit_exponent_needs_ladder():
    with pytest.raises(InsufficientLadder):
        fr.fit_exponent([(1, 1), (10, 2), (100, 3)])
    with pytest.raises(InsufficientLadder):
        fr.fit_exponent([(1, 1), (2, 2), (4, 3), (8, 4)])


def test_psi_ladder_and_report(tmp_path):
    rep = fr.run_ladder(fr.EstimateSpec("FRE_PSI"), search=FAST)
    sups = [r[1] for r in rep.ladder]
    assert all(b >= a for a, b in zip(sups, sups[1:]))
    assert rep.fitted_exponent <= 0.5 + 0.05
    assert rep.passed
    rep.write_json(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["spec_id"] == "FRE_PSI" and len(d["ladder"]) == 5
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "M,sup,samples,stderr,xi,alpha"


def test_sreg_reports_dominant_branch():
    spec = fr.EstimateSpec("SOURCE_SREG_D1", tau=1e-2, t=1e-2)
    rep = fr.run_ladder(spec, search=fr.GridSearchConfig(n_xi=5, refine=False,
                                                         sampler=fr.SamplerConfig(n_samples=4000)))
    assert rep.extra["dominant_branch"] == ["nu", "nu", "mu", "mu", "mu"]
    assert len(rep.extra["branch_bound"]) == 5


def test_tau_scaling_small_tau():
    spec = fr.EstimateSpec("SOURCE_PSI_DTAU", tau=1e-4)
    sups, slope = fr.tau_scaling(spec, (1e-4, 1e-8), M=1.0, search=FAST)
    assert slope == pytest.approx((0.45 - 0.3) / 3, rel=0.3)


# ---------------------------------------------------------------- dyadic conversion

def test_dyadic_flat_multiplier():
    rep = fr.dyadic_conversion_check(lambda lam, xi, al: 2 * lam, 2.0, 1.0)
    assert rep.decay_exponent == pytest.approx(-1.0, abs=0.1)
    # analytic tail 2/M
    assert rep.tails[0] == pytest.approx(2.0, rel=1e-4)
    assert rep.passed


def test_dyadic_complementarity_rho_zero():
    spec = fr.EstimateSpec("QUAD_SQUARE")
    V = lambda lam: fr.sublevel_integral(spec, 0, 0.3, lam, SMALL)[0]
    for M in (0.05, 0.2):
        assert V(M) + fr.tail_integral(V, M, 0.0) == pytest.approx(2.0, abs=1e-12)


def test_dyadic_requires_rho_above_theta():
    with pytest.raises(ValueError):
        fr.dyadic_conversion_check(lambda lam, xi, al: 2 * lam, 0.5, 1.0)


def test_dyadic_phi_tail_decays():
    rep = fr.dyadic_conversion_check(fr.EstimateSpec("FRE_PHI"), 1.0, 1.0, cells=[(1.0, 0.0)], n_lambda=60,
                                     sampler=fr.SamplerConfig(n_samples=5000))
    assert rep.decay_exponent <= -0.3 / 3 + 0.05


# ---------------------------------------------------------------- pointwise bound

def test_pointwise_zero():
    z = lambda x: 0 * x
    rep = fr.pointwise_nonlinearity_bound_check(z, z, z, [0.01, 0.02, 0.04], 0.3, 0.3, 0.3, N=128)
    assert rep.norms == [0.0, 0.0, 0.0] and rep.passed


def test_pointwise_gaussian():
    g = lambda x: np.exp(-x**2)
    ts = [0.01, 0.02, 0.04, 0.08, 0.16]
    rep = fr.pointwise_nonlinearity_bound_check(g, g, g, ts, 0.3, 0.3, 0.3, N=256)
    assert rep.theta == 0.0
    assert rep.fitted_exponent >= 0.3 / 3 - 0.1
    assert all(r <= 2 ** (rep.theta + 0.1) * 1.1 for r in rep.doubling_ratios)


def test_pointwise_rejects_bad_exponents():
    g = lambda x: np.exp(-x**2)
    with pytest.raises(ValueError):
        fr.pointwise_nonlinearity_bound_check(g, g, g, [0.1, 0.2], 0.3, 0.5, 0.4)


def test_spec_validation():
    with pytest.raises(ValueError):
        fr.EstimateSpec("NOPE")
    with pytest.raises(ValueError):
        fr.EstimateSpec("SOURCE_PHI_D3")
    with pytest.raises(ValueError):
        fr.EstimateSpec("SOURCE_SREG_D1", tau=0.1)
    s = fr.EstimateSpec("SOURCE_PSI_DTAU", tau=0.1)
    assert s.domain == "DTAU" and s.phase == "PSI"
    assert fr.EstimateSpec("FRE_PHI").target_exponent == pytest.approx(0.9)
    assert fr.EstimateSpec("SOURCE_PHI_D3", tau=0.1).target_exponent == pytest.approx(s.params.beta)
