"""Evolution of the cutoff approximate problem in Fourier profile variables.

The trilinear form N[f,g,h](t,xi) = xi * int_{H_xi} e^{it Phi} f(xi1) g(xi2) h(xi3)
is evaluated on a staggered uniform grid, either through zero-padded FFT
convolutions (fast path) or by masked direct sums (used for the restricted
pieces of the decomposition).  Both compute the same discrete triple sum.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .errors import AliasingDetected, StepRejected
from .phase_geometry import phi as phase_phi

DEFAULT_COUPLING = -1j / (4 * np.pi**2)


# ---------------------------------------------------------------- grids

def make_grid(N: int, Xi: float) -> np.ndarray:
    """Staggered nodes (k - N/2 + 1/2) * dxi, dxi = 2 Xi / N; no node at 0."""
    if N % 2:
        raise ValueError("N must be even")
    d = 2.0 * Xi / N
    return (np.arange(N) - N / 2 + 0.5) * d


@dataclass
class ProfileGrid:
    xi: np.ndarray
    values: np.ndarray
    time: float = 0.0

    @property
    def dxi(self):
        return float(self.xi[1] - self.xi[0])

    def with_values(self, v, time=None):
        return ProfileGrid(self.xi, np.asarray(v, dtype=complex), self.time if time is None else time)

    def hermitian_defect(self):
        v = self.values
        return float(np.max(np.abs(v[::-1] - np.conj(v)))) if len(v) else 0.0

    def is_hermitian(self, tol=1e-10):
        return self.hermitian_defect() <= tol


def _vals(f):
    return f.values if isinstance(f, ProfileGrid) else np.asarray(f, dtype=complex)


def _xi_of(*args):
    for a in args:
        if isinstance(a, ProfileGrid):
            return a.xi
    return None


# ---------------------------------------------------------------- cutoffs

@dataclass(frozen=True)
class CutoffFamily:
    """chi_n = 1 on [-n, n], exp(1 - q(|xi|/n)) outside.

    q is C^2 and monotone: q = 1 + L s'^3 - (L/2) s'^4 on s' = s - 1 in [0, 1],
    then linear with slope L.  Hence |chi_n'| <= (L/n) chi_n.
    """
    n: float
    slope: float = 2.0

    def _q(self, s):
        L = self.slope
        u = np.clip(s - 1.0, 0.0, None)
        inner = 1 + L * u**3 - 0.5 * L * u**4
        outer = 1 + 0.5 * L + L * (u - 1.0)
        q = np.where(u <= 1.0, inner, outer)
        dq = np.where(u <= 1.0, 3 * L * u**2 - 2 * L * u**3, L)
        return q, dq

    def chi(self, xi):
        s = np.abs(np.asarray(xi, dtype=float)) / self.n
        q, _ = self._q(s)
        return np.where(s <= 1.0, 1.0, np.exp(1.0 - q))

    def dchi(self, xi):
        xi = np.asarray(xi, dtype=float)
        s = np.abs(xi) / self.n
        q, dq = self._q(s)
        return np.where(s <= 1.0, 0.0, -np.sign(xi) * dq / self.n * np.exp(1.0 - q))

    def ratio_constant(self, xi):
        """Measured max |chi'| / chi on the nodes."""
        return float(np.max(np.abs(self.dchi(xi)) / self.chi(xi)))


# ---------------------------------------------------------------- trilinear form

def apply_N(f, g, h, t: float, alias_tol=None):
    """N[f,g,h](t, xi_m) via zero-padded FFT convolution.

    The inputs are conjugated by e^{-it xi^3}, convolved exactly (padding to
    at least 3N - 2 points), then multiplied by xi e^{it xi^3} dxi^2.
    """
    xi = _xi_of(f, g, h)
    fv, gv, hv = _vals(f), _vals(g), _vals(h)
    n = len(fv)
    if xi is None:
        raise ValueError("need at least one ProfileGrid input")
    d = xi[1] - xi[0]
    ph = np.exp(-1j * t * xi**3)
    L = sfft.next_fast_len(3 * n - 2)
    Ff = sfft.fft(fv * ph, L)
    Fg = Ff if gv is fv else sfft.fft(gv * ph, L)
    Fh = Ff if hv is fv else (Fg if hv is gv else sfft.fft(hv * ph, L))
    conv = sfft.ifft(Ff * Fg * Fh)
    out = conv[n - 1:2 * n - 1] * d**2 * xi * np.conj(ph)
    if alias_tol is not None:
        frac = band_energy_fraction(out, xi)
        if frac > alias_tol:
            raise AliasingDetected(f"energy fraction {frac:.3g} beyond 2/3 band", fraction=frac)
    if isinstance(f, ProfileGrid):
        return ProfileGrid(xi, out, t)
    return out


def band_energy_fraction(v, xi):
    e = np.abs(v) ** 2
    tot = e.sum()
    if tot == 0:
        return 0.0
    return float(e[np.abs(xi) > 2.0 * np.max(np.abs(xi)) / 3.0].sum() / tot)


class TripleSum:
    """Direct masked evaluation of the discrete trilinear form on a grid."""

    def __init__(self, xi):
        self.xi = np.asarray(xi, dtype=float)
        n = len(xi)
        self.n = n
        self.d = float(xi[1] - xi[0])
        m, i, j = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        k = m + n - 1 - i - j
        self.valid = (k >= 0) & (k < n)
        self.i, self.j, self.k = i, j, np.clip(k, 0, n - 1)
        self.X, self.X1, self.X2 = self.xi[m], self.xi[i], self.xi[j]
        self.X3 = self.xi[self.k]
        self.Phi = phase_phi(self.X, self.X1, self.X2)

    def __call__(self, f, g, h, t, mask=None):
        f, g, h = _vals(f), _vals(g), _vals(h)
        w = self.valid if mask is None else (self.valid & mask)
        terms = np.exp(1j * t * self.Phi) * f[self.i] * g[self.j] * h[self.k]
        s = np.where(w, terms, 0).sum(axis=(1, 2))
        return self.xi * s * self.d**2


@lru_cache(maxsize=4)
def _triple_cached(n, xi0, d):
    return TripleSum((np.arange(n) + 0.0) * d + xi0)


def triple_sum(xi):
    return _triple_cached(len(xi), float(xi[0]), float(xi[1] - xi[0]))


def direct_N(f, g, h, t, mask=None, xi=None):
    xi = _xi_of(f, g, h) if xi is None else xi
    return triple_sum(xi)(f, g, h, t, mask)


# ---------------------------------------------------------------- domains

@dataclass(frozen=True)
class DomainDecomposition:
    tau: float

    @property
    def r3(self):
        return self.tau ** (-1.0 / 3.0)

    def in_Dtau(self, zeta, eta):
        return np.abs(zeta) + np.abs(eta) >= self.r3 / 10.0

    def D1(self, xi, xi1, xi2):
        """(xi, xi1 + xi2) in D(tau); xi1, xi2 are the frequencies of the two S factors."""
        return self.in_Dtau(xi, xi1 + xi2)

    def D2(self, xi, xi1, xi2):
        return ~self.D1(xi, xi1, xi2)

    def D3(self, xi, xi1, xi2):
        xi3 = xi - xi1 - xi2
        return np.abs(xi1) + np.abs(xi2) + np.abs(xi3) >= self.r3

    def D4(self, xi, xi1, xi2):
        return ~self.D3(xi, xi1, xi2)


# ---------------------------------------------------------------- decomposition

@dataclass
class NonlinearityPieces:
    """Pieces of N[S+z+w] - N[S]; source pieces take t, operators take (w, t)."""
    F11: object
    F12: object
    F2: object
    L_K_Dtau: object
    L_K: object
    L2: object
    Q: object
    tau: float

    def source(self, t):
        return self.F11(t) + self.F12(t) + self.F2(t) + self.L_K_Dtau(t)

    def total(self, w, t):
        return self.source(t) + self.L_K(w, t) + self.L2(w, t) + self.Q(w, t)


def profile_values(S, t, xi):
    """(S0, Sreg) grids at time t for a profile object."""
    return S.s0_at(t, xi), S.sreg_at(t, xi)


def assemble_pieces(S, z, tau, xi=None) -> NonlinearityPieces:
    """Split N[S+z+w] - N[S] into restricted source pieces and w-operators.

    Source pieces:
      F11  = xi int_{D3} (z + 3S)(xi1) z z
      F12  = 3 xi int_{D1} (Sreg + 2 S0)(xi1) Sreg(xi2) z(xi3)
      F2   = xi int_{D4} (z + 3S) z z + 3 xi int_{D2} S S z
      L_K_Dtau = 3 xi int_{D1} S0 S0 z
    Operators:
      L_K[w] = 3 N[S0, S0, w]
      L2[w]  = 3 N[S,S,w] - 3 N[S0,S0,w] + 6 N[S,z,w] + 3 N[z,z,w]
      Q[w]   = 3 N[S+z, w, w] + N[w,w,w]
    """
    xi = _xi_of(z) if xi is None else xi
    zv = _vals(z)
    T = triple_sum(xi)
    dom = DomainDecomposition(tau)
    mD1 = dom.D1(T.X, T.X1, T.X2)
    mD2 = ~mD1
    mD3 = dom.D3(T.X, T.X1, T.X2)
    mD4 = ~mD3

    def F11(t):
        s0, sr = profile_values(S, t, xi)
        return T(zv + 3 * (s0 + sr), zv, zv, t, mD3)

    def F12(t):
        s0, sr = profile_values(S, t, xi)
        return 3 * T(sr + 2 * s0, sr, zv, t, mD1)

    def F2(t):
        s0, sr = profile_values(S, t, xi)
        s = s0 + sr
        return T(zv + 3 * s, zv, zv, t, mD4) + 3 * T(s, s, zv, t, mD2)

    def LKD(t):
        s0, _ = profile_values(S, t, xi)
        return 3 * T(s0, s0, zv, t, mD1)

    def LK(w, t):
        s0, _ = profile_values(S, t, xi)
        return 3 * T(s0, s0, _vals(w), t)

    def L2(w, t):
        s0, sr = profile_values(S, t, xi)
        s = s0 + sr
        wv = _vals(w)
        return (3 * T(s, s, wv, t) - 3 * T(s0, s0, wv, t)
                + 6 * T(s, zv, wv, t) + 3 * T(zv, zv, wv, t))

    def Q(w, t):
        s0, sr = profile_values(S, t, xi)
        wv = _vals(w)
        return 3 * T(s0 + sr + zv, wv, wv, t) + T(wv, wv, wv, t)

    return NonlinearityPieces(F11, F12, F2, LKD, LK, L2, Q, tau)


def discrete_K(s0_vals, xi, t):
    """Binary kernel on the integer lattice eta_k = k dxi, |k| < N.

    Kd(t, eta) = dxi * sum_{xi1 + xi2 = eta} e^{-(3/4) i t eta lam^2} S0(xi1) S0(xi2),
    so that N[S0,S0,w](xi) = xi dxi sum_eta e^{-it psi(xi,eta)} w(xi - eta) Kd(eta).
    """
    n = len(xi)
    d = xi[1] - xi[0]
    ph = np.exp(-1j * t * xi**3)
    L = sfft.next_fast_len(2 * n - 1)
    F = sfft.fft(s0_vals * ph, L)
    conv = sfft.ifft(F * F)[:2 * n - 1]
    eta = (np.arange(2 * n - 1) - (n - 1)) * d
    return eta, conv * d * np.exp(1j * t * eta**3 / 4)


# ---------------------------------------------------------------- time stepping

def rhs_w(w, S, z, cutoff: CutoffFamily | None, t, coupling=DEFAULT_COUPLING):
    """coupling * chi_n^2 (N[S + z_n + w] - N[S])."""
    xi = w.xi
    chi = np.ones_like(xi) if cutoff is None else cutoff.chi(xi)
    s = S.at(t, xi) if hasattr(S, "at") else _vals(S)
    zn = chi * _vals(z)
    v = ProfileGrid(xi, s + zn + w.values)
    sg = ProfileGrid(xi, s)
    out = apply_N(v, v, v, t).values - apply_N(sg, sg, sg, t).values
    return coupling * chi**2 * out


def _check(v):
    if not np.all(np.isfinite(v)):
        raise StepRejected("non-finite values in step")
    return v


def rk4(fun, y, t, dt):
    k1 = fun(t, y)
    k2 = fun(t + dt / 2, y + dt / 2 * k1)
    k3 = fun(t + dt / 2, y + dt / 2 * k2)
    k4 = fun(t + dt, y + dt * k3)
    return _check(y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))


def step_wn(w: ProfileGrid, S, z, cutoff, t, dt, coupling=DEFAULT_COUPLING):
    fun = lambda tt, y: rhs_w(ProfileGrid(w.xi, y), S, z, cutoff, tt, coupling)
    return ProfileGrid(w.xi, rk4(fun, w.values, t, dt), t + dt)


def rhs_full(u, t, coupling=DEFAULT_COUPLING):
    return coupling * apply_N(u, u, u, t).values


def evolve_full(u0: ProfileGrid, t0, t1, dt, coupling=DEFAULT_COUPLING):
    """Integrate the uncut profile equation for the full solution; returns final grid and mass history."""
    xi = u0.xi
    y = u0.values.copy()
    n = int(np.ceil((t1 - t0) / dt - 1e-9))
    h = (t1 - t0) / n
    mass = [float(np.sum(np.abs(y) ** 2) * u0.dxi)]
    fun = lambda tt, yy: rhs_full(ProfileGrid(xi, yy), tt, coupling)
    t = t0
    for _ in range(n):
        y = rk4(fun, y, t, h)
        t += h
        mass.append(float(np.sum(np.abs(y) ** 2) * u0.dxi))
    return ProfileGrid(xi, y, t1), np.array(mass)


# ---------------------------------------------------------------- Lambda operator

def d_xi(v, xi):
    """Fourth-order finite-difference derivative in xi (one-sided near the ends)."""
    v = _vals(v)
    d = xi[1] - xi[0]
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * d)
    c = np.array([-25, 48, -36, 16, -3]) / (12 * d)
    out[0] = c @ v[:5]
    out[1] = np.array([-3, -10, 18, -6, 1]) / (12 * d) @ v[:5]
    out[-1] = -(c @ v[::-1][:5])
    out[-2] = -(np.array([-3, -10, 18, -6, 1]) / (12 * d) @ v[::-1][:5])
    return out


def lambda_apply(w: ProfileGrid, dtw, t):
    """Lambda w = d_xi w - (3t/xi) d_t w on the staggered grid."""
    xi = w.xi
    return ProfileGrid(xi, d_xi(w.values, xi) - 3 * t / xi * _vals(dtw), w.time)


def rhs_lambda(lw, w, S, z, cutoff, t, coupling=DEFAULT_COUPLING):
    """coupling * [(3 chi^2/xi) N[xi Lambda(z_n + w), v, v] + 2 chi chi' (N[v] - N[S])]."""
    xi = w.xi
    chi = np.ones_like(xi) if cutoff is None else cutoff.chi(xi)
    dchi = np.zeros_like(xi) if cutoff is None else cutoff.dchi(xi)
    zn = chi * _vals(z)
    s = S.at(t, xi) if hasattr(S, "at") else _vals(S)
    v = ProfileGrid(xi, s + zn + _vals(w))
    sg = ProfileGrid(xi, s)
    lam_zw = d_xi(zn, xi) + _vals(lw)
    first = apply_N(ProfileGrid(xi, xi * lam_zw), v, v, t).values
    diff = apply_N(v, v, v, t).values - apply_N(sg, sg, sg, t).values
    return coupling * (3 * chi**2 / xi * first + 2 * chi * dchi * diff)


def step_coupled(w: ProfileGrid, lw: ProfileGrid, S, z, cutoff, t, dt, coupling=DEFAULT_COUPLING):
    """One RK4 step of (w_n, Lambda w_n)."""
    xi = w.xi
    n = len(xi)

    def fun(tt, y):
        wg = ProfileGrid(xi, y[:n])
        return np.concatenate([rhs_w(wg, S, z, cutoff, tt, coupling),
                               rhs_lambda(y[n:], wg, S, z, cutoff, tt, coupling)])

    y = rk4(fun, np.concatenate([w.values, _vals(lw)]), t, dt)
    return ProfileGrid(xi, y[:n], t + dt), ProfileGrid(xi, y[n:], t + dt)


def step_lambda_wn(lw, w, S, z, cutoff, t, dt, coupling=DEFAULT_COUPLING):
    return step_coupled(w, lw, S, z, cutoff, t, dt, coupling)[1]


# ---------------------------------------------------------------- norms

def jap(x):
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


def weighted_norms(w, dtw, dxw, mu, t=None, lw=None):
    """sup <xi>^mu |w|, sup <xi>^mu |d_xi w|, sup <xi>^mu |(t/xi) d_t w| and optionally |Lambda w|."""
    xi = _xi_of(w, dtw, dxw)
    mu = getattr(mu, "mu", mu)
    wt = jap(xi) ** mu
    row = {
        "norm_w": float(np.max(wt * np.abs(_vals(w)))),
        "norm_dxw": float(np.max(wt * np.abs(_vals(dxw)))),
    }
    tt = 1.0 if t is None else t
    nz = xi != 0
    row["norm_tdtw_over_xi"] = float(np.max((wt * np.abs(tt / np.where(nz, xi, 1.0) * _vals(dtw)))[nz]))
    if lw is not None:
        row["norm_lambda_w"] = float(np.max(wt * np.abs(_vals(lw))))
    return row


@dataclass
class NormTracker:
    t: list = field(default_factory=list)
    norm_w: list = field(default_factory=list)
    norm_dxw: list = field(default_factory=list)
    norm_tdtw_over_xi: list = field(default_factory=list)
    norm_lambda_w: list = field(default_factory=list)

    def append(self, t, row):
        self.t.append(float(t))
        for k in ("norm_w", "norm_dxw", "norm_tdtw_over_xi", "norm_lambda_w"):
            getattr(self, k).append(float(row.get(k, 0.0)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            cols = ["t", "norm_w", "norm_dxw", "norm_tdtw_over_xi", "norm_lambda_w"]
            wr.writerow(cols)
            for r in zip(*(getattr(self, c) for c in cols)):
                wr.writerow([repr(float(v)) for v in r])


def fit_growth_exponent(t, y, t_min=None):
    t, y = np.asarray(t), np.asarray(y)
    m = (y > 0) & (t > 0)
    if t_min is not None:
        m &= t >= t_min
    if m.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[m]), np.log(y[m]), 1)[0])


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentConfig:
    N: int = 256
    Xi: float = 16.0
    n_cutoff: float = 8.0
    t_start: float = 1e-3
    T: float = 0.1
    dt: float = 1e-4
    params: dict = field(default_factory=lambda: {"mu": 0.3, "nu": 0.45, "gamma": 0.03, "epsilon": 0.05})
    z_spec: dict = field(default_factory=lambda: {"kind": "gaussian", "amplitude": 0.05})
    S_spec: dict = field(default_factory=lambda: {"A": 0.04, "B": 0.0})
    seed: int = 0
    track_lambda: bool = True
    n_records: int = 41

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def make_z(xi, spec, rng=None):
    """Perturbation on the grid.

    kinds: gaussian (amplitude, center, width), power (amplitude * <xi>^-nu with
    a smooth phase), random (smooth random Hermitian field, seeded), zero.
    All kinds are Hermitian so the physical perturbation is real.
    """
    kind = spec.get("kind", "gaussian")
    amp = float(spec.get("amplitude", 0.05))
    if kind == "zero" or amp == 0:
        return np.zeros(len(xi), dtype=complex)
    if kind == "gaussian":
        c, wd = float(spec.get("center", 0.0)), float(spec.get("width", 1.0))
        g = np.exp(-(np.abs(xi) - c) ** 2 / (2 * wd**2))
        return amp * g * np.exp(1j * float(spec.get("phase", 0.5)) * np.sign(xi) * np.tanh(xi))
    if kind == "power":
        nu = float(spec.get("nu", 0.45))
        return amp * jap(xi) ** (-nu) * np.exp(1j * np.sign(xi) * np.log1p(np.abs(xi)))
    if kind == "random":
        rng = np.random.default_rng(spec.get("seed", 0)) if rng is None else rng
        k = int(spec.get("modes", 6))
        wd = float(spec.get("width", 2.0))
        v = np.zeros(len(xi), dtype=complex)
        for _ in range(k):
            c = rng.normal() * wd
            a = rng.normal() + 1j * rng.normal()
            v += a * np.exp(-(xi - c) ** 2 / 2) + np.conj(a) * np.exp(-(xi + c) ** 2 / 2)
        return amp * v / np.max(np.abs(v))
    raise ValueError(f"unknown z kind {kind!r}")


def make_S(spec):
    from .selfsimilar_profile import SelfSimilarConfig, fourier_profile_model, log_phase_from_amplitude
    d = dict(spec)
    A = float(d.pop("A", 0.0))
    if "a" not in d:
        d["a"] = log_phase_from_amplitude(A)
    return fourier_profile_model(SelfSimilarConfig(A=A, **d))


@dataclass
class ExperimentResult:
    tracker: NormTracker
    w: ProfileGrid
    lw: ProfileGrid | None
    growth_exponent: float
    summary: dict


def run_experiment(config: ExperimentConfig | dict, S=None, z=None) -> ExperimentResult:
    """Integrate w_n (and Lambda w_n) on [t_start, T] from w = 0, recording weighted norms."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    cfg = config
    mu = float(cfg.params.get("mu", 0.3))
    gamma = float(cfg.params.get("gamma", 0.03))
    xi = make_grid(cfg.N, cfg.Xi)
    S = make_S(cfg.S_spec) if S is None else S
    zv = make_z(xi, cfg.z_spec, np.random.default_rng(cfg.seed)) if z is None else _vals(z)
    cutoff = CutoffFamily(cfg.n_cutoff)
    w = ProfileGrid(xi, np.zeros(cfg.N, dtype=complex), cfg.t_start)
    lw = None
    if cfg.track_lambda:
        # Lambda w at t_start: w = 0 but d_t w does not vanish
        lw = lambda_apply(w, rhs_w(w, S, zv, cutoff, cfg.t_start), cfg.t_start)
    nsteps = int(np.ceil((cfg.T - cfg.t_start) / cfg.dt - 1e-9))
    h = (cfg.T - cfg.t_start) / nsteps
    tracker = NormTracker()
    t = cfg.t_start

    def record(t, w, lw):
        dtw = rhs_w(w, S, zv, cutoff, t)
        row = weighted_norms(w, dtw, d_xi(w.values, xi), mu, t, lw)
        tracker.append(t, row)

    record(t, w, lw)
    # log-spaced checkpoints, each recorded at the first step reaching it
    marks = np.geomspace(cfg.t_start, cfg.T, cfg.n_records)[1:]
    nxt = 0
    for k in range(nsteps):
        if lw is not None:
            w, lw = step_coupled(w, lw, S, zv, cutoff, t, h)
        else:
            w = step_wn(w, S, zv, cutoff, t, h)
        t = cfg.t_start + (k + 1) * h
        if nxt < len(marks) and (t >= marks[nxt] * (1 - 1e-12) or k + 1 == nsteps):
            record(t, w, lw)
            while nxt < len(marks) and t >= marks[nxt] * (1 - 1e-12):
                nxt += 1
    tt = np.array(tracker.t)
    nw = np.array(tracker.norm_w)
    p = fit_growth_exponent(tt, nw)
    scaled = nw[1:] * tt[1:] ** (-gamma)
    summary = {
        "growth_exponent": p,
        "gamma": gamma,
        "max_norm_w": float(nw.max()),
        "scaled_max": float(scaled.max()) if len(scaled) else 0.0,
        "scaled_min": float(scaled.min()) if len(scaled) else 0.0,
        "steps": nsteps,
        "dt": h,
    }
    eps = float(cfg.params.get("epsilon", 0.05))
    if eps > 0 and len(scaled):
        summary["bound_constant"] = float(np.max(nw[1:] / (eps**3 * tt[1:] ** gamma)))
    return ExperimentResult(tracker, w, lw, p, summary)
