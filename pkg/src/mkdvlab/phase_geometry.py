"""Cubic resonance phases on the convolution hyperplane and their normal forms.

Ternary points are (xi, xi1, xi2) with xi3 = xi - xi1 - xi2.  Binary points
are (xi, eta) where eta is the frequency carried by the K kernel.
All functions broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np


@dataclass(frozen=True)
class PhasePointTernary:
    xi: float
    xi1: float
    xi2: float

    @property
    def xi3(self):
        return self.xi - self.xi1 - self.xi2

    def freqs(self):
        return (self.xi1, self.xi2, self.xi3)


@dataclass(frozen=True)
class PhasePointBinary:
    xi: float
    eta: float


@dataclass(frozen=True)
class StationaryPointSet:
    ternary: tuple
    binary: tuple


def _ternary_args(p, xi1, xi2):
    if isinstance(p, PhasePointTernary):
        return p.xi, p.xi1, p.xi2
    return p, xi1, xi2


def phi(p, xi1=None, xi2=None):
    """xi^3 - xi1^3 - xi2^3 - xi3^3."""
    xi, xi1, xi2 = _ternary_args(p, xi1, xi2)
    xi = np.asarray(xi, dtype=float)
    xi3 = xi - xi1 - xi2
    return xi**3 - xi1**3 - xi2**3 - xi3**3


def phi_factored(p, xi1=None, xi2=None):
    """Same value as `phi`, via 3(xi1+xi2)(xi2+xi3)(xi1+xi3)."""
    xi, xi1, xi2 = _ternary_args(p, xi1, xi2)
    xi3 = np.asarray(xi, dtype=float) - xi1 - xi2
    return 3.0 * (xi1 + xi2) * (xi2 + xi3) * (xi1 + xi3)


def psi(p, eta=None):
    """-(3/4) eta (eta - 2 xi)^2."""
    if isinstance(p, PhasePointBinary):
        xi, eta = p.xi, p.eta
    else:
        xi = p
    xi = np.asarray(xi, dtype=float)
    return -0.75 * eta * (eta - 2.0 * xi) ** 2


def psi_expanded(xi, eta):
    return -3.0 * eta * xi**2 + 3.0 * xi * eta**2 - 0.75 * eta**3


def grad_phi(p, xi1=None, xi2=None):
    """Gradient of phi in the represented frequencies (xi1, xi2)."""
    xi, xi1, xi2 = _ternary_args(p, xi1, xi2)
    xi3 = np.asarray(xi, dtype=float) - xi1 - xi2
    return -3.0 * (xi1**2 - xi3**2), -3.0 * (xi2**2 - xi3**2)


def hessian_phi(p, xi1=None, xi2=None):
    xi, xi1, xi2 = _ternary_args(p, xi1, xi2)
    xi3 = float(xi) - xi1 - xi2
    return np.array([[-6.0 * (xi1 + xi3), -6.0 * xi3],
                     [-6.0 * xi3, -6.0 * (xi2 + xi3)]])


def dpsi_deta(xi, eta):
    return -0.75 * (eta - 2.0 * xi) * (3.0 * eta - 2.0 * xi)


def normalized_phi(p1, p2):
    """phi with xi = 1, so that Phi(xi, xi p1, xi p2) = xi^3 phi(p1, p2)."""
    p3 = 1.0 - p1 - p2
    return 1.0 - p1**3 - p2**3 - p3**3


def normalized_psi(p):
    return -0.75 * p * (p - 2.0) ** 2


def grad_normalized_phi(p1, p2):
    p3 = 1.0 - p1 - p2
    return -3.0 * (p1**2 - p3**2), -3.0 * (p2**2 - p3**2)


def hessian_normalized_phi(p1, p2):
    return hessian_phi(1.0, p1, p2)


def dnormalized_psi(p):
    return -0.75 * (p - 2.0) * (3.0 * p - 2.0)


def stationary_points(xi=1.0):
    """Critical points of the ternary phase (in (xi1, xi2)) and of psi (in p = eta/xi)."""
    tern = ((xi / 3.0, xi / 3.0), (xi, xi), (xi, -xi), (-xi, xi))
    return StationaryPointSet(ternary=tern, binary=(2.0, 2.0 / 3.0))


def reparametrize(p: PhasePointTernary, order):
    """Return the same hyperplane point with frequencies listed in `order`.

    `order` is a permutation of (0, 1, 2); the first two entries become the
    represented pair.
    """
    f = p.freqs()
    a, b, _ = (f[i] for i in order)
    return PhasePointTernary(p.xi, a, b)


def all_parametrizations(p: PhasePointTernary):
    return [reparametrize(p, o) for o in permutations(range(3))]


def binary_to_ternary(xi, eta, lam):
    """(xi, eta, lambda) -> (xi1, xi2) with eta = xi1+xi2 and lambda = xi1-xi2."""
    return 0.5 * (eta + lam), 0.5 * (eta - lam)


def phi_binary_split(xi, eta, lam):
    """phi written through the K substitution: -psi(xi, eta) - (3/4) eta lam^2."""
    return -psi(xi, eta) - 0.75 * eta * lam**2
