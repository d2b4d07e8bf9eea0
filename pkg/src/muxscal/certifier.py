"""Scalability certificates for the multiplex formation protocol.

For the robot protocol every block is a Kronecker product ``M (x) I_2`` of
a 3x3 layer matrix with the planar identity.  The 6x6 matrices are kept
for inspection and for the general block-bound path; the batched margin
routine works on the 3x3 factors, which have the same eigenvalues and
2-norms.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .halanay import ContractionMargins, ScalabilityBoundCoeffs, convergence_rate
from .linalg import (
    BlockMatrixBounds,
    composite_measure_bound,
    composite_norm_bound,
    induced_norm,
    matrix_measure,
)
from .protocol import FormationTopology, GainSet

__all__ = [
    "BlockJacobians",
    "Certificate",
    "DEFAULT_EPSILON",
    "build_blocks",
    "certify",
    "certify_general",
    "check_C2",
    "check_C3",
    "robot_margins",
    "robot_network_bounds",
    "transform_factor",
]

DEFAULT_EPSILON = 1e-9
_I2 = np.eye(2)


def transform_factor(alpha1, alpha2):
    """3x3 factor of the transform and its exact inverse."""
    T = np.array([[1.0, alpha1, 0.0], [0.0, 1.0, alpha2], [0.0, 0.0, 1.0]])
    T_inv = np.array([[1.0, -alpha1, alpha1 * alpha2], [0.0, 1.0, -alpha2], [0.0, 0.0, 1.0]])
    return T, T_inv


def _companion_factor(k):
    k = np.asarray(k, dtype=float)
    A = np.zeros(k.shape[:-1] + (3, 3))
    A[..., :, 0] = -k
    A[..., 0, 1] = 1.0
    A[..., 1, 2] = 1.0
    return A


def _column_factor(g):
    g = np.asarray(g, dtype=float)
    B = np.zeros(g.shape[:-1] + (3, 3))
    B[..., :, 0] = g
    return B


@dataclass(frozen=True)
class BlockJacobians:
    """Transformed-coordinate building blocks for one agent (all 6x6).

    ``B_tilde_ii`` and ``B_tilde_ij`` are the worst cases of the delayed
    self and cross Jacobians over the tanh slope range.
    """

    A_bar_ii: np.ndarray
    B_tilde_ii: np.ndarray
    B_tilde_ij: np.ndarray
    T_bar: np.ndarray
    T_bar_inv: np.ndarray
    n_bar: int

    def transformed(self, M):
        return self.T_bar @ M @ self.T_bar_inv


def build_blocks(gains: GainSet, n_bar) -> BlockJacobians:
    if n_bar < 1:
        raise ValueError("n_bar must be >= 1")
    T3, T3_inv = transform_factor(gains.alpha1, gains.alpha2)
    B_ij = _column_factor(gains.g_bar)
    return BlockJacobians(
        A_bar_ii=np.kron(_companion_factor(gains.k), _I2),
        B_tilde_ii=np.kron(-n_bar * B_ij, _I2),
        B_tilde_ij=np.kron(B_ij, _I2),
        T_bar=np.kron(T3, _I2),
        T_bar_inv=np.kron(T3_inv, _I2),
        n_bar=int(n_bar),
    )


def check_C2(bj: BlockJacobians) -> float:
    """Delay-free contraction margin ``-mu_2(T A T^-1)``.

    Delay-free couplings only involve the leader, so there are no
    cross-agent blocks to add.  Positive means the condition holds.
    """
    return -float(matrix_measure(bj.transformed(bj.A_bar_ii), 2))


def check_C3(bj: BlockJacobians, n_bar=None) -> float:
    """Worst-case row sum of delayed-block 2-norms."""
    n_bar = bj.n_bar if n_bar is None else n_bar
    if n_bar != bj.n_bar:
        raise ValueError("blocks were built for a different n_bar")
    self_norm = float(induced_norm(bj.transformed(bj.B_tilde_ii), 2))
    cross_norm = float(induced_norm(bj.transformed(bj.B_tilde_ij), 2))
    return self_norm + n_bar * cross_norm


def robot_margins(k, g_bar, alpha, n_bar):
    """Batched ``(sigma_bar, sigma_under)`` on the 3x3 Kronecker factors.

    ``k`` and ``g_bar`` have shape ``(..., 3)``; ``alpha`` is a pair or an
    array ``(..., 2)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    a1, a2 = alpha[..., 0], alpha[..., 1]
    shape = np.broadcast_shapes(np.shape(k)[:-1], np.shape(g_bar)[:-1], a1.shape)
    T = np.zeros(shape + (3, 3))
    T_inv = np.zeros(shape + (3, 3))
    T[..., [0, 1, 2], [0, 1, 2]] = 1.0
    T_inv[..., [0, 1, 2], [0, 1, 2]] = 1.0
    T[..., 0, 1], T[..., 1, 2] = a1, a2
    T_inv[..., 0, 1], T_inv[..., 1, 2], T_inv[..., 0, 2] = -a1, -a2, a1 * a2
    A = T @ _companion_factor(k) @ T_inv
    B = T @ _column_factor(g_bar) @ T_inv
    sigma_bar = -matrix_measure(A, 2)
    cross = induced_norm(B, 2)
    return sigma_bar, 2 * n_bar * cross


@dataclass(frozen=True)
class Certificate:
    """Outcome of the scalability check.

    ``rate`` and ``gain_dc`` are ``None`` when infeasible.
    """

    sigma_bar: float
    sigma_under: float
    rate: float | None
    kappa: float
    feasible: bool
    margins_epsilon: float
    tau_max: float
    gain_dc: float | None = None

    @property
    def gap(self):
        return self.sigma_bar - self.sigma_under

    @property
    def coeffs(self) -> ScalabilityBoundCoeffs:
        if not self.feasible:
            raise ValueError("infeasible certificate carries no bound")
        return ScalabilityBoundCoeffs(self.kappa, self.gain_dc, self.rate)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _finish(sigma_bar, sigma_under, kappa, tau_max, eps):
    feasible = bool(sigma_bar - sigma_under > eps and sigma_under >= 0)
    rate = gain_dc = None
    if feasible:
        margins = ContractionMargins(sigma_bar, sigma_under, tau_max)
        rate = convergence_rate(margins)
        gain_dc = kappa / margins.gap
    return Certificate(float(sigma_bar), float(sigma_under), rate, float(kappa),
                       feasible, float(eps), float(tau_max), gain_dc)


def certify(gains: GainSet, n_bar, tau_max, eps=DEFAULT_EPSILON) -> Certificate:
    """Tight margins, convergence rate and bound coefficients for ``gains``.

    ``kappa`` is the 2-norm condition number of the per-agent transform;
    with identical diagonal blocks and the max-of-blocks network norm it
    equals the network one.
    """
    if tau_max < 0 or not math.isfinite(tau_max):
        raise ValueError("tau_max must be finite and non-negative")
    bj = build_blocks(gains, n_bar)
    kappa = float(induced_norm(bj.T_bar, 2) * induced_norm(bj.T_bar_inv, 2))
    return _finish(check_C2(bj), check_C3(bj), kappa, tau_max, eps)


def certify_general(delay_free: BlockMatrixBounds, delayed: BlockMatrixBounds,
                    delayed_diag_norms, tau_max, kappa=1.0, eps=DEFAULT_EPSILON) -> Certificate:
    """Certificate from user-supplied uniform block bounds.

    ``delay_free`` carries the measures of the transformed delay-free
    diagonal blocks and the norms of its cross blocks; ``delayed`` carries
    the delayed cross-block norms, with the delayed self-block norms passed
    separately.  The bounds must hold over the whole state space.
    """
    if delay_free.n_blocks != delayed.n_blocks:
        raise ValueError("delay-free and delayed bounds have different block counts")
    if kappa < 1.0 - 1e-12:
        raise ValueError("kappa must be >= 1")
    sigma_bar = -composite_measure_bound(delay_free)
    sigma_under = composite_norm_bound(delayed, delayed_diag_norms)
    return _finish(sigma_bar, sigma_under, kappa, tau_max, eps)


def robot_network_bounds(bj: BlockJacobians, topology: FormationTopology):
    """Per-agent block bounds of the robot network for :func:`certify_general`."""
    n = topology.n_agents
    mu = float(matrix_measure(bj.transformed(bj.A_bar_ii), 2))
    self_norm = float(induced_norm(bj.transformed(bj.B_tilde_ii), 2))
    cross_norm = float(induced_norm(bj.transformed(bj.B_tilde_ij), 2))
    offdiag = np.zeros((n, n))
    for i, nb in enumerate(topology.neighbors):
        offdiag[i, list(nb)] = cross_norm
    delay_free = BlockMatrixBounds(np.full(n, mu), np.zeros((n, n)))
    delayed = BlockMatrixBounds(np.zeros(n), offdiag)
    return delay_free, delayed, np.full(n, self_norm)
