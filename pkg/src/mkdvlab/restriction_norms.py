"""Space-time restriction norms and the local fixed point for the cubic equation.

A SpaceTimeGrid stores V(tau, xi) = F_t v(tau, xi), the time Fourier transform
of the Fourier profile v(t, xi) = F_x(e^{t d_x^3} u(t))(xi).  The time transform
is unitary, F_t g(tau) = (2 pi)^{-1/2} int e^{-i t tau} g(t) dt, and is realised
by an FFT on a symmetric periodic time window [-L, L).

In profile variables the Duhamel nonlinearity d_x(u^3) becomes c N[v, v, v](t)
with the same trilinear form and coupling as the evolution solver.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import fft as sfft
from scipy.integrate import cumulative_simpson
from scipy.special import gamma as gamma_fn

from .errors import ConfigInvalid, NoContraction, QuadratureNotConverged
from .profile_evolution import DEFAULT_COUPLING, ProfileGrid, apply_N, direct_N, jap, make_grid
from .selfsimilar_profile import smoothstep

# (rule id, clause, text), listed with the analysis rules by the CLI validator
BOURGAIN_RULES = (
    ("bourg_mu_pos", "bourgain-params", "0 < mu"),
    ("bourg_b_half", "bourgain-params", "1/2 < b"),
    ("bourg_bp_low", "bourgain-params", "b - 1 < b'"),
    ("bourg_bp_neg", "bourgain-params", "b' < 0"),
    ("bourg_gap", "bourgain-params", "0 < 1 + b' - b"),
    ("bourg_delta", "bourgain-params", "0 < delta < 1"),
)


def check_bourgain(mu, b, b_prime, delta):
    ok = {
        "bourg_mu_pos": mu > 0,
        "bourg_b_half": b > 0.5,
        "bourg_bp_low": b - 1 < b_prime,
        "bourg_bp_neg": b_prime < 0,
        "bourg_gap": 1 + b_prime - b > 0,
        "bourg_delta": 0 < delta < 1,
    }
    return [r for r in BOURGAIN_RULES if not ok[r[0]]]


@dataclass(frozen=True)
class BourgainParams:
    mu: float = 0.3
    b: float = 0.55
    b_prime: float = -0.05
    delta: float = 0.1

    def __post_init__(self):
        bad = check_bourgain(self.mu, self.b, self.b_prime, self.delta)
        if bad:
            raise ConfigInvalid("inadmissible Bourgain exponents: " + "; ".join(t for _, _, t in bad),
                                path="bourgain", violations=bad)

    @property
    def gain(self):
        """Exponent 1 + b' - b of the Duhamel estimate."""
        return 1.0 + self.b_prime - self.b

    @property
    def trilinear_admissible(self):
        # b < 1/2 + mu/6 with 1 - mu/3 + 2b' < 0
        return self.b < 0.5 + self.mu / 6 and 1 - self.mu / 3 + 2 * self.b_prime < 0

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- grids

def time_grid(n_t=1024, L=4.0):
    """Nodes (k - n/2) dt on [-L, L), dt = 2L/n; node n/2 sits at t = 0."""
    if n_t % 2:
        raise ValueError("n_t must be even")
    dt = 2.0 * L / n_t
    return (np.arange(n_t) - n_t // 2) * dt


def _tau_of(t):
    n = len(t)
    dt = t[1] - t[0]
    return (np.arange(n) - n // 2) * (2 * np.pi / (n * dt))


def _shift_sign(n):
    # e^{-i t_0 tau_m} with t_0 = -(n/2) dt is exactly (-1)^{m - n/2}
    return np.where((np.arange(n) - n // 2) % 2, -1.0, 1.0)


@dataclass
class SpaceTimeGrid:
    tau_nodes: np.ndarray
    xi_nodes: np.ndarray
    values: np.ndarray
    report: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (len(self.tau_nodes), len(self.xi_nodes)):
            raise ValueError("values must have shape (n_tau, n_xi)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite entries")

    @property
    def extents(self):
        return {"tau_max": float(np.max(np.abs(self.tau_nodes))), "xi_max": float(np.max(np.abs(self.xi_nodes)))}

    @property
    def t_nodes(self):
        n = len(self.tau_nodes)
        dtau = self.tau_nodes[1] - self.tau_nodes[0]
        return (np.arange(n) - n // 2) * (2 * np.pi / (n * dtau))

    @classmethod
    def from_time(cls, t, xi, v):
        """Transform profile samples v[k, j] = v(t_k, xi_j)."""
        t = np.asarray(t, dtype=float)
        tau = _tau_of(t)
        dt = t[1] - t[0]
        F = sfft.fftshift(sfft.fft(np.asarray(v, dtype=complex), axis=0), axes=0)
        V = F * (_shift_sign(len(t)) * dt / math.sqrt(2 * np.pi))[:, None]
        return cls(tau, np.asarray(xi, dtype=float), V)

    def to_time(self):
        t = self.t_nodes
        dt = t[1] - t[0]
        F = self.values * (_shift_sign(len(t)) * math.sqrt(2 * np.pi) / dt)[:, None]
        return sfft.ifft(sfft.ifftshift(F, axes=0), axis=0)


def psi(t):
    """Even bump, 1 on [-1, 1] and 0 outside [-2, 2]."""
    v, _, _ = smoothstep(2.0 - np.abs(np.asarray(t, dtype=float)))
    return v


def psi_delta(t, delta):
    return psi(np.asarray(t, dtype=float) / delta)


# ---------------------------------------------------------------- norms

def _weighted(u: SpaceTimeGrid, mu, b):
    return jap(u.tau_nodes)[:, None] ** b * jap(u.xi_nodes)[None, :] ** mu * np.abs(u.values)


def xmub_norm(u: SpaceTimeGrid, p: BourgainParams, b=None) -> float:
    """L^2_tau L^inf_xi of <tau>^b <xi>^mu V (trapezoid in tau, max in xi)."""
    W = _weighted(u, p.mu, p.b if b is None else b)
    return float(math.sqrt(np.trapezoid(np.max(W, axis=1) ** 2, u.tau_nodes)))


def ymub_norm(u: SpaceTimeGrid, p: BourgainParams, b=None) -> float:
    """L^inf_xi L^2_tau, the same weight with the norms swapped."""
    W = _weighted(u, p.mu, p.b if b is None else b)
    return float(math.sqrt(np.max(np.trapezoid(W**2, u.tau_nodes, axis=0))))


def tail_fraction(u: SpaceTimeGrid, p: BourgainParams, b=None, cut=0.5):
    """Share of the squared X norm carried by |tau| > cut * tau_max."""
    W = np.max(_weighted(u, p.mu, p.b if b is None else b), axis=1) ** 2
    tot = np.trapezoid(W, u.tau_nodes)
    if tot == 0:
        return 0.0
    far = np.abs(u.tau_nodes) > cut * np.max(np.abs(u.tau_nodes))
    return float(np.trapezoid(np.where(far, W, 0.0), u.tau_nodes) / tot)


def embedding_constant(b):
    """(2 pi)^{-1/2} ||<tau>^{-b}||_{L^2}, the constant of the trace bound for b > 1/2."""
    return math.sqrt(math.sqrt(math.pi) * gamma_fn(b - 0.5) / gamma_fn(b) / (2 * math.pi))


def trace_ratio(u: SpaceTimeGrid, p: BourgainParams):
    """sup_t ||<xi>^mu v(t)||_inf divided by the X norm."""
    x = xmub_norm(u, p)
    if x == 0:
        return 0.0
    v = u.to_time()
    return float(np.max(jap(u.xi_nodes)[None, :] ** p.mu * np.abs(v)) / x)


# ---------------------------------------------------------------- reports

@dataclass
class CheckReport:
    check_id: str
    params: dict
    values: list
    fitted: float | None
    target: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------- linear and Duhamel terms

def linear_estimate_check(u0: ProfileGrid, p: BourgainParams, n_t=1024, L=8.0) -> float:
    """||psi(t) e^{-t d^3} u0||_X / ||u0^||_{L^inf_mu}; 0 for u0 = 0."""
    den = float(np.max(jap(u0.xi) ** p.mu * np.abs(u0.values)))
    if den == 0:
        return 0.0
    t = time_grid(n_t, L)
    g = SpaceTimeGrid.from_time(t, u0.xi, psi(t)[:, None] * u0.values[None, :])
    return xmub_norm(g, p) / den


def _cumint_from_zero(f, t):
    """int_0^{t_k} f(s) ds for every node, Simpson on each side of t = 0."""
    i0 = int(np.argmin(np.abs(t)))
    dt = t[1] - t[0]
    # cumulative_simpson drops imaginary parts, so integrate them separately
    cs = lambda y, h: (cumulative_simpson(y.real, dx=h, axis=0, initial=0)
                       + 1j * cumulative_simpson(y.imag, dx=h, axis=0, initial=0))
    out = np.zeros_like(f)
    if len(t) - i0 > 1:
        out[i0:] = cs(f[i0:], dt)
    if i0 > 0:
        out[:i0 + 1] = cs(f[i0::-1], -dt)[::-1]
    return out


def duhamel_time(f, t, delta, min_nodes=8):
    """psi_delta(t) int_0^t f(s) ds on time samples f[k, j]."""
    dt = t[1] - t[0]
    if delta / dt < min_nodes:
        raise QuadratureNotConverged(f"delta={delta} resolved by {delta / dt:.1f} < {min_nodes} time steps",
                                     values=(delta, dt))
    return psi_delta(t, delta)[:, None] * _cumint_from_zero(np.asarray(f, dtype=complex), t)


def fit_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def duhamel_scaling_check(f: SpaceTimeGrid, p: BourgainParams, delta_ladder=(0.4, 0.2, 0.1),
                          slack=0.1) -> CheckReport:
    """delta-exponent of ||psi_delta int_0^t f||_{X^{mu,b}} / ||f||_{Y^{mu,b'}}."""
    ds = sorted(float(d) for d in delta_ladder)
    if len(ds) < 3 or not all(0 < d < 1 for d in ds):
        raise ValueError("delta ladder needs at least 3 values in (0, 1)")
    den = ymub_norm(f, p, b=p.b_prime)
    target = p.gain
    if den == 0:
        return CheckReport("duhamel_scaling", p.to_dict(), [[d, 0.0] for d in ds], None, target, True)
    t = f.t_nodes
    fv = f.to_time()
    rows, tails = [], []
    for d in ds:
        D = SpaceTimeGrid.from_time(t, f.xi_nodes, duhamel_time(fv, t, d))
        rows.append([d, xmub_norm(D, p) / den])
        tails.append(tail_fraction(D, p))
    slope = fit_slope([r[0] for r in rows], [r[1] for r in rows])
    return CheckReport("duhamel_scaling", p.to_dict(), rows, slope, target, slope >= target - slack,
                       {"tail_fraction": max(tails)})


# ---------------------------------------------------------------- trilinear estimate

def nonlinear_time(v1, v2, v3, t, xi, coupling=DEFAULT_COUPLING, nodes=None, direct=False):
    """Profile of d_x(u1 u2 u3): coupling * N[v1, v2, v3](t) at each time node."""
    out = np.zeros((len(t), len(xi)), dtype=complex)
    ks = range(len(t)) if nodes is None else nodes
    for k in ks:
        if not (v1[k].any() and v2[k].any() and v3[k].any()):
            continue
        if direct:
            out[k] = coupling * direct_N(v1[k], v2[k], v3[k], float(t[k]), xi=xi)
        else:
            out[k] = coupling * apply_N(ProfileGrid(xi, v1[k]), v2[k], v3[k], float(t[k])).values
    return out


def trilinear_check(u1: SpaceTimeGrid, u2: SpaceTimeGrid, u3: SpaceTimeGrid, p: BourgainParams,
                    coupling=DEFAULT_COUPLING) -> float:
    """||d_x(u1 u2 u3)||_{Y^{mu,b'}} / prod ||u_i||_{X^{mu,b}}."""
    if not p.trilinear_admissible:
        raise ValueError("trilinear estimate needs b < 1/2 + mu/6 and 1 - mu/3 + 2b' < 0")
    norms = [xmub_norm(u, p) for u in (u1, u2, u3)]
    if min(norms) == 0:
        return 0.0
    t, xi = u1.t_nodes, u1.xi_nodes
    f = nonlinear_time(u1.to_time(), u2.to_time(), u3.to_time(), t, xi, coupling)
    F = SpaceTimeGrid.from_time(t, xi, f)
    return ymub_norm(F, p, b=p.b_prime) / math.prod(norms)


def random_spacetime(rng, t, xi, n_bumps=2):
    """Smooth, time-localized random profile: bumps in xi times modulated bumps in t."""
    v = np.zeros((len(t), len(xi)), dtype=complex)
    for _ in range(n_bumps):
        c, w = rng.uniform(-0.5, 0.5) * xi.max(), rng.uniform(0.5, 2.0)
        a = rng.normal() + 1j * rng.normal()
        omega, s = rng.uniform(-5, 5), rng.uniform(0.5, 1.5)
        tt = psi(t / s) * np.exp(1j * omega * t)
        v += a * tt[:, None] * np.exp(-((xi - c) / w) ** 2)[None, :]
    return SpaceTimeGrid.from_time(t, xi, v)


def trilinear_samples(p: BourgainParams, n=20, seed=0, N=64, Xi=8.0, n_t=512, L=4.0,
                      bound=10.0) -> CheckReport:
    """Ratios over n random triples; passes when max/median <= bound."""
    rng = np.random.default_rng(seed)
    t, xi = time_grid(n_t, L), make_grid(N, Xi)
    ratios = []
    for _ in range(n):
        us = [random_spacetime(rng, t, xi) for _ in range(3)]
        ratios.append(trilinear_check(*us, p))
    spread = float(np.max(ratios) / np.median(ratios))
    return CheckReport("trilinear", p.to_dict(), ratios, spread, bound, spread <= bound,
                       {"seed": seed, "N": N, "Xi": Xi, "n_t": n_t, "L": L})


# ---------------------------------------------------------------- fixed point

def duhamel_map(v, v0, t, xi, delta, coupling=DEFAULT_COUPLING, direct=False):
    """psi(t) v0 + psi_delta(t) int_0^t coupling N[v](s) ds on time samples."""
    nodes = np.nonzero(np.abs(t) < 2 * delta)[0]
    f = nonlinear_time(v, v, v, t, xi, coupling, nodes, direct)
    return psi(t)[:, None] * v0[None, :] + duhamel_time(f, t, delta)


def lwp_fixed_point(u0: ProfileGrid, p: BourgainParams, max_iter=60, tol=1e-12, n_t=1024, L=4.0,
                    coupling=DEFAULT_COUPLING) -> SpaceTimeGrid:
    """Picard iteration of the truncated Duhamel equation, measured in X^{mu,b}.

    The returned grid carries a report with the successive contraction factors
    and the Duhamel residual recomputed through the direct lattice sum.
    """
    t, xi = time_grid(n_t, L), u0.xi
    v0 = np.asarray(u0.values, dtype=complex)
    xn = lambda v: xmub_norm(SpaceTimeGrid.from_time(t, xi, v), p)
    v = psi(t)[:, None] * v0[None, :]
    diffs, factors = [], []
    bad = 0
    converged = False
    for it in range(1, max_iter + 1):
        nv = duhamel_map(v, v0, t, xi, p.delta, coupling)
        diffs.append(xn(nv - v))
        v = nv
        scale = max(xn(v), 1e-300)
        if diffs[-1] <= tol * scale:
            converged = True
            break
        if len(diffs) > 1:
            factors.append(diffs[-1] / diffs[-2])
            bad = bad + 1 if factors[-1] >= 1 else 0
            if bad >= 3:
                raise NoContraction(f"successive ratios >= 1 for 3 iterations at delta={p.delta}",
                                    factors=factors)
    out = SpaceTimeGrid.from_time(t, xi, v)
    norm = xmub_norm(out, p)
    if norm:
        res = xn(v - duhamel_map(v, v0, t, xi, p.delta, coupling, direct=True)) / norm
    else:
        res = 0.0
    # ratios once the differences sit well above roundoff
    usable = [f for f, d in zip(factors, diffs[1:]) if d > 1e-9 * max(norm, 1e-300)]
    out.report = {
        "iterations": it, "converged": converged, "diffs": diffs, "factors": factors,
        "contraction": max(usable) if usable else 0.0, "residual": res, "norm": norm,
        "data_norm": float(np.max(jap(xi) ** p.mu * np.abs(v0))), "delta": p.delta,
        "tail_fraction": tail_fraction(out, p),
    }
    return out
