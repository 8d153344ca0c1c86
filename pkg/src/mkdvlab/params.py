"""Exponent bundle shared by the analysis modules, with its admissibility rules."""
from __future__ import annotations

from dataclasses import dataclass, asdict

from .errors import ConfigInvalid

# (rule id, clause, human-readable form); every strict inequality is listed once.
RULES = (
    ("mu_pos", "exponent-order", "0 < mu"),
    ("mu_lt_nu", "exponent-order", "mu < nu"),
    ("nu_lt_half", "exponent-order", "nu < 1/2"),
    ("gamma_pos", "gamma-window", "0 < gamma"),
    ("gamma_mu", "gamma-window", "gamma < mu/3"),
    ("gamma_gap", "gamma-window", "gamma < (nu - mu)/3"),
    ("beta_mu", "beta-window", "1 - mu/3 < beta"),
    ("beta_gap", "beta-window", "1 - (nu - mu - 3 gamma)/2 < beta"),
    ("beta_lt_one", "beta-window", "beta < 1"),
    ("rho_pos", "rho-window", "0 < rho"),
    ("rho_beta", "rho-window", "rho < (1 - beta)/3"),
    ("rho_gap", "rho-window", "rho < (nu - mu - 3 gamma)/9"),
    ("rho_nu", "rho-window", "rho < (nu - 3 gamma)/12"),
    ("eps_pos", "smallness", "0 < epsilon"),
    ("T_pos", "smallness", "0 < T"),
)


def beta_lower(mu, nu, gamma):
    return max(1 - mu / 3, 1 - (nu - mu - 3 * gamma) / 2)


def rho_upper(mu, nu, gamma, beta):
    return min((1 - beta) / 3, (nu - mu - 3 * gamma) / 9, (nu - 3 * gamma) / 12)


def check_rules(mu, nu, gamma, beta, rho, epsilon=0.05, T=0.1):
    """Return the list of (rule id, clause, text) that fail."""
    ok = {
        "mu_pos": 0 < mu,
        "mu_lt_nu": mu < nu,
        "nu_lt_half": nu < 0.5,
        "gamma_pos": 0 < gamma,
        "gamma_mu": gamma < mu / 3,
        "gamma_gap": gamma < (nu - mu) / 3,
        "beta_mu": 1 - mu / 3 < beta,
        "beta_gap": 1 - (nu - mu - 3 * gamma) / 2 < beta,
        "beta_lt_one": beta < 1,
        "rho_pos": 0 < rho,
        "rho_beta": rho < (1 - beta) / 3,
        "rho_gap": rho < (nu - mu - 3 * gamma) / 9,
        "rho_nu": rho < (nu - 3 * gamma) / 12,
        "eps_pos": 0 < epsilon,
        "T_pos": 0 < T,
    }
    return [r for r in RULES if not ok[r[0]]]


@dataclass(frozen=True)
class AnalysisParams:
    mu: float = 0.3
    nu: float = 0.45
    gamma: float = 0.03
    beta: float | None = None
    rho: float | None = None
    epsilon: float = 0.05
    T: float = 0.1

    def __post_init__(self):
        # unspecified beta / rho sit in the middle of their windows
        if self.beta is None:
            lo = beta_lower(self.mu, self.nu, self.gamma)
            object.__setattr__(self, "beta", 0.5 * (lo + 1.0))
        if self.rho is None:
            object.__setattr__(self, "rho", 0.5 * rho_upper(self.mu, self.nu, self.gamma, self.beta))
        bad = check_rules(self.mu, self.nu, self.gamma, self.beta, self.rho, self.epsilon, self.T)
        if bad:
            raise ConfigInvalid("inadmissible exponents: " + "; ".join(f"{c}: {t}" for _, c, t in bad),
                                path="params", violations=bad)

    def to_dict(self):
        return asdict(self)
