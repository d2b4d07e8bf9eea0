"""Delayed convergence rate and the exponential/ISS envelopes built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ContractionMargins",
    "InfeasibleMarginsError",
    "ScalabilityBoundCoeffs",
    "convergence_rate",
    "halanay_envelope",
    "iss_bound",
    "output_bound",
]

_BISECTION_MAX_ITER = 200


class InfeasibleMarginsError(ValueError):
    """Raised when the delay-free margin does not dominate the delayed gain."""


@dataclass(frozen=True)
class ContractionMargins:
    """Contraction margin ``sigma_bar``, delayed gain bound ``sigma_under``
    (both 1/s) and the delay bound ``tau_max`` (s)."""

    sigma_bar: float
    sigma_under: float
    tau_max: float = 0.0

    def __post_init__(self):
        vals = (self.sigma_bar, self.sigma_under, self.tau_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("margins must be finite")
        if self.sigma_under < 0:
            raise ValueError("sigma_under must be >= 0")
        if self.tau_max < 0:
            raise ValueError("tau_max must be >= 0")
        if not self.sigma_bar > self.sigma_under:
            raise InfeasibleMarginsError(
                f"need sigma_bar > sigma_under, got {self.sigma_bar} <= {self.sigma_under}"
            )

    @property
    def gap(self):
        return self.sigma_bar - self.sigma_under


@dataclass(frozen=True)
class ScalabilityBoundCoeffs:
    """Coefficients of the network deviation bound.

    ``kappa`` is the condition number of the coordinate change,
    ``gain_dc = kappa / (sigma_bar - sigma_under)`` multiplies the residual
    disturbance and ``rate`` is the exponential decay rate of the transient.
    """

    kappa: float
    gain_dc: float
    rate: float

    def __post_init__(self):
        if not self.kappa >= 1.0 - 1e-12:
            raise ValueError("kappa must be >= 1")
        if not self.gain_dc > 0:
            raise ValueError("gain_dc must be positive")
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    @classmethod
    def from_margins(cls, margins: ContractionMargins, kappa: float):
        return cls(kappa, kappa / margins.gap, convergence_rate(margins))


def _rate_residual(lam, m):
    return lam - m.sigma_bar + m.sigma_under * math.exp(lam * m.tau_max)


def convergence_rate(m: ContractionMargins) -> float:
    """Positive root of ``lam - sigma_bar + sigma_under * exp(lam * tau_max)``.

    The residual is strictly increasing in ``lam``; it is negative at 0 and
    non-negative at ``sigma_bar``, so plain bisection on that bracket runs
    until the bracket collapses to adjacent floats.
    """
    if m.sigma_under == 0.0:
        return float(m.sigma_bar)
    lo, hi = 0.0, float(m.sigma_bar)
    for _ in range(_BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _rate_residual(mid, m) < 0.0:
            lo = mid
        else:
            hi = mid
    if abs(_rate_residual(lo, m)) <= abs(_rate_residual(hi, m)):
        return lo
    return hi


def halanay_envelope(u0_sup, c, m: ContractionMargins, t_minus_t0):
    """``u0_sup * exp(-rate * dt) + c / (sigma_bar - sigma_under)``.

    ``t_minus_t0`` may be an array.
    """
    dt = np.asarray(t_minus_t0, dtype=float)
    if u0_sup < 0 or c < 0 or np.any(dt < 0):
        raise ValueError("u0_sup, c and t - t0 must be non-negative")
    lam = convergence_rate(m)
    out = u0_sup * np.exp(-lam * dt) + c / m.gap
    return float(out) if out.ndim == 0 else out


def iss_bound(coeffs: ScalabilityBoundCoeffs, w_sup, x0_dev_sup, zeta0_sup, t_minus_t0):
    """Upper bound on ``max_i |x_i(t) - x_i*(t)|``, uniform in network size.

    ``gain_dc * w_sup + kappa * exp(-rate * dt) * (x0_dev_sup + zeta0_sup)``
    where ``zeta0_sup`` is the initial mismatch between the integrator
    states and the polynomial disturbance derivatives.
    """
    dt = np.asarray(t_minus_t0, dtype=float)
    if min(w_sup, x0_dev_sup, zeta0_sup) < 0 or np.any(dt < 0):
        raise ValueError("magnitudes must be non-negative")
    out = coeffs.gain_dc * w_sup + coeffs.kappa * np.exp(-coeffs.rate * dt) * (
        x0_dev_sup + zeta0_sup
    )
    return float(out) if out.ndim == 0 else out


def output_bound(iss, lipschitz_g):
    """Output deviation bound for a Lipschitz output map."""
    if lipschitz_g < 0:
        raise ValueError("Lipschitz constant must be non-negative")
    return lipschitz_g * iss
