"""Multiplex integral formation protocol.

The robots' hand positions obey ``eta_i' = v_l + nu_i + d_i`` where the
control ``nu_i`` is built by a stack of integrating layers::

    nu_i   = h_0 + h_0^tau + r_1
    r_1'   = h_1 + h_1^tau + r_2
    r_2'   = h_2 + h_2^tau

with delay-free leader couplings ``h_k = k_k (eta_l - eta_i - delta_li)``
and delayed, saturated neighbour couplings
``h_k^tau = k_k^tau * sum_j tanh(k_psi (eta_j - eta_i - delta_ji))``
evaluated at ``t - tau``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

__all__ = [
    "DampedSinusoid",
    "DisturbanceSpec",
    "FormationTopology",
    "GainSet",
    "build_topology",
    "coupling_terms",
    "eval_disturbance",
    "polynomial_offsets",
    "protocol_derivatives",
    "zeta_coordinates",
]

N_LAYERS = 2


@dataclass(frozen=True)
class GainSet:
    """Protocol gains and the parameters of the block-triangular transform.

    ``k0, k1, k2`` act on the leader error (1/s, 1/s^2, 1/s^3),
    ``k*_tau`` scale the delayed neighbour terms and ``k_psi`` (1/m) is the
    slope of the tanh saturation.  ``alpha1, alpha2`` only enter the
    certificate.
    """

    k0: float
    k1: float
    k2: float
    k0_tau: float
    k1_tau: float
    k2_tau: float
    k_psi: float
    alpha1: float = 0.0
    alpha2: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"gain {f.name} must be a finite number, got {v!r}")
            object.__setattr__(self, f.name, float(v))
        for name in ("k0", "k1", "k2", "k0_tau", "k1_tau", "k2_tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"gain {name} must be non-negative")
        if not self.k_psi > 0:
            raise ValueError("k_psi must be positive")

    @property
    def k(self):
        return np.array([self.k0, self.k1, self.k2])

    @property
    def k_tau(self):
        return np.array([self.k0_tau, self.k1_tau, self.k2_tau])

    @property
    def g_bar(self):
        """Saturation-scaled delayed gains ``k_psi * k_tau``."""
        return self.k_psi * self.k_tau

    @property
    def alpha(self):
        return (self.alpha1, self.alpha2)

    def layer_gains(self, layer):
        if layer not in (0, 1, 2):
            raise ValueError(f"layer must be 0, 1 or 2, got {layer!r}")
        return float(self.k[layer]), float(self.k_tau[layer])

    def sign_constraints_ok(self):
        """Strict positivity of ``k_l + g_bar_l`` on every layer."""
        return bool(np.all(self.k + self.g_bar > 0))

    @classmethod
    def from_gbar(cls, k, g_bar, k_psi, alpha):
        k0, k1, k2 = (float(x) for x in k)
        t0, t1, t2 = (float(x) / k_psi for x in g_bar)
        return cls(k0, k1, k2, t0, t1, t2, k_psi, float(alpha[0]), float(alpha[1]))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        names = [f.name for f in fields(cls)]
        missing = [n for n in names[:7] if n not in d]
        if missing:
            raise KeyError(f"missing gain fields: {', '.join(missing)}")
        unknown = set(d) - set(names)
        if unknown:
            raise KeyError(f"unknown gain fields: {', '.join(sorted(unknown))}")
        return cls(**{n: d[n] for n in names if n in d})


def _as_axis_pair(v, name):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = np.array([arr, arr], dtype=float)
    if arr.shape != (2,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be a scalar or a finite 2-vector")
    return arr


@dataclass(frozen=True)
class DampedSinusoid:
    """``amp * sin(omega t + phase) * exp(-decay t)`` applied per axis."""

    amp: np.ndarray
    omega: float
    decay: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        amp = _as_axis_pair(self.amp, "amp")
        if np.any(amp < 0):
            raise ValueError("residual amplitude must be non-negative")
        object.__setattr__(self, "amp", amp)
        for name in ("omega", "decay", "phase"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        s = np.sin(self.omega * t + self.phase) * np.exp(-self.decay * t)
        return s[..., None] * self.amp

    def to_dict(self):
        return {"amp": self.amp.tolist(), "omega": self.omega,
                "decay": self.decay, "phase": self.phase}


@dataclass(frozen=True)
class DisturbanceSpec:
    """Polynomial-plus-residual disturbance on one agent.

    ``poly_coeffs[q]`` is the 2-vector coefficient of ``t**q``; the residual
    is the sum of damped sinusoids.
    """

    poly_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    residual_terms: tuple = ()

    def __post_init__(self):
        rows = [_as_axis_pair(c, "polynomial coefficient") for c in self.poly_coeffs]
        poly = np.array(rows, dtype=float).reshape(-1, 2)
        terms = tuple(
            t if isinstance(t, DampedSinusoid) else DampedSinusoid(**t)
            for t in self.residual_terms
        )
        object.__setattr__(self, "poly_coeffs", poly)
        object.__setattr__(self, "residual_terms", terms)

    @property
    def order(self):
        """Number of polynomial coefficients (``m`` layers reject ``m`` of them)."""
        return self.poly_coeffs.shape[0]

    def polynomial(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (2,))
        for q in range(self.order - 1, -1, -1):
            out = out * t[..., None] + self.poly_coeffs[q]
        return out

    def residual(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (2,))
        for term in self.residual_terms:
            out = out + term(t)
        return out

    def __call__(self, t):
        return self.polynomial(t) + self.residual(t)

    def padded(self, m):
        """Polynomial coefficients padded with zeros to ``m`` rows."""
        if self.order > m:
            raise ValueError(
                f"polynomial of order {self.order - 1} needs more than {m} layers"
            )
        out = np.zeros((m, 2))
        out[: self.order] = self.poly_coeffs
        return out

    def residual_sup(self, t_end, n_grid=20001):
        """Upper bound on ``sup_{0<=t<=t_end} |w(t)|_2``.

        Dense sampling plus a Lipschitz correction for the unsampled gaps.
        """
        if not self.residual_terms:
            return 0.0
        ts = np.linspace(0.0, t_end, n_grid)
        peak = float(np.max(np.linalg.norm(self.residual(ts), axis=-1)))
        lip = sum(float(np.linalg.norm(w.amp)) * (abs(w.omega) + abs(w.decay))
                  for w in self.residual_terms)
        return peak + lip * (ts[1] - ts[0]) / 2.0

    def to_dict(self):
        return {"poly": self.poly_coeffs.tolist(),
                "residual": [w.to_dict() for w in self.residual_terms]}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"agent", "poly", "residual"}
        if unknown:
            raise KeyError(f"unknown disturbance fields: {', '.join(sorted(unknown))}")
        return cls(d.get("poly", []), tuple(DampedSinusoid(**w) for w in d.get("residual", [])))


def eval_disturbance(spec: DisturbanceSpec, t):
    """Disturbance value ``d(t)`` (m/s); shape ``(..., 2)``."""
    return spec(t)


def polynomial_offsets(spec: DisturbanceSpec, m, t):
    """Layer-wise polynomial terms added to ``r`` in the zeta coordinates.

    Row ``k - 1`` is ``sum_b (m-1-b)!/(m-k-b)! * dbar_{m-1-b} * t**(m-k-b)``,
    i.e. the ``(k-1)``-th time derivative of the polynomial disturbance.
    """
    coeffs = spec.padded(m)
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (m, 2))
    for k in range(1, m + 1):
        for b in range(0, m - k + 1):
            q = m - 1 - b
            w = math.factorial(q) / math.factorial(m - k - b)
            out[..., k - 1, :] += w * coeffs[q] * (t ** (m - k - b))[..., None]
    return out


def zeta_coordinates(r, spec: DisturbanceSpec, t):
    """Integrator states shifted by the polynomial disturbance derivatives.

    ``r`` has shape ``(..., m, 2)``.  On a trajectory that rejects the
    polynomial part of the disturbance these coordinates tend to zero.
    """
    r = np.asarray(r, dtype=float)
    return r + polynomial_offsets(spec, r.shape[-2], t)


@dataclass(frozen=True)
class FormationTopology:
    """Concentric-circle formation around a virtual leader.

    Agents are indexed from 0 circle by circle (circle ``k`` holds ``4k``
    agents); ``positions`` are desired hand positions relative to the
    leader so that ``leader_offsets = -positions``.  ``neighbors[i]`` lists
    the agents whose delayed positions agent ``i`` receives.
    """

    n_circles: int
    radius_step: float
    n_bar: int
    positions: np.ndarray
    circle_of: np.ndarray
    neighbors: tuple

    def __post_init__(self):
        n = self.positions.shape[0]
        if any(len(nb) > self.n_bar for nb in self.neighbors):
            raise ValueError("a neighbour set exceeds n_bar")
        width = max(1, self.n_bar)
        idx = np.tile(np.arange(n)[:, None], (1, width))
        mask = np.zeros((n, width), dtype=bool)
        for i, nb in enumerate(self.neighbors):
            idx[i, : len(nb)] = nb
            mask[i, : len(nb)] = True
        offsets = (self.positions[idx] - self.positions[:, None, :]) * mask[..., None]
        object.__setattr__(self, "_nbr_index", idx)
        object.__setattr__(self, "_nbr_mask", mask)
        object.__setattr__(self, "_nbr_offsets", offsets)

    @property
    def n_agents(self):
        return self.positions.shape[0]

    @property
    def leader_offsets(self):
        """``delta*_li = eta_l* - eta_i*``."""
        return -self.positions

    def neighbor_offset(self, i, j):
        """``delta*_ji = eta_j* - eta_i*``."""
        return self.positions[j] - self.positions[i]

    @property
    def padded_neighbors(self):
        """``(index, mask, offsets)`` arrays of shape ``(N, n_bar[, 2])``."""
        return self._nbr_index, self._nbr_mask, self._nbr_offsets

    def agents_on_circle(self, k):
        return np.flatnonzero(self.circle_of == k)


def build_topology(n_circles, radius_step=0.2, n_bar=3):
    """Concentric-circle formation with ``4k`` agents on circle ``k``.

    Each agent listens to the agents immediately ahead and behind on its own
    circle and to the closest agent on the next circle inwards (lowest index
    on ties); the set is cut to the ``n_bar`` closest if needed.
    """
    if n_circles < 1 or int(n_circles) != n_circles:
        raise ValueError("n_circles must be a positive integer")
    if not radius_step > 0:
        raise ValueError("radius_step must be positive")
    if n_bar < 1:
        raise ValueError("n_bar must be >= 1")
    n_circles = int(n_circles)
    starts = [2 * k * (k - 1) for k in range(1, n_circles + 2)]
    pos, circ = [], []
    for k in range(1, n_circles + 1):
        ang = 2.0 * np.pi * np.arange(4 * k) / (4 * k)
        pos.append(k * radius_step * np.column_stack([np.cos(ang), np.sin(ang)]))
        circ.append(np.full(4 * k, k))
    positions = np.vstack(pos)
    circle_of = np.concatenate(circ)

    def dist(i, j):
        return float(np.hypot(*(positions[j] - positions[i])))

    neighbors = []
    for k in range(1, n_circles + 1):
        s, cnt = starts[k - 1], 4 * k
        for jl in range(cnt):
            i = s + jl
            cand = {s + (jl + 1) % cnt, s + (jl - 1) % cnt}
            if k > 1:
                inner = range(starts[k - 2], starts[k - 2] + 4 * (k - 1))
                d = [dist(i, j) for j in inner]
                dmin = min(d)
                cand.add(next(j for j, dj in zip(inner, d) if dj <= dmin + 1e-12))
            cand.discard(i)
            ranked = sorted(cand, key=lambda j: (round(dist(i, j), 12), j))
            neighbors.append(tuple(sorted(ranked[:n_bar])))
    return FormationTopology(n_circles, float(radius_step), int(n_bar),
                             positions, circle_of, tuple(neighbors))


def coupling_terms(gains: GainSet, layer, eta_i, eta_l, leader_offset, delayed_neighbors):
    """Delay-free and delayed coupling of one agent on one layer.

    ``delayed_neighbors`` is a list of ``(eta_j_delayed, eta_i_delayed,
    delta_ji)`` triples.  Returns ``(delay_free, delayed)`` 2-vectors.
    """
    k, k_tau = gains.layer_gains(layer)
    eta_i = np.asarray(eta_i, dtype=float)
    delay_free = k * (np.asarray(eta_l, dtype=float) - eta_i - np.asarray(leader_offset, dtype=float))
    delayed = np.zeros(2)
    for eta_j_d, eta_i_d, off in delayed_neighbors:
        arg = np.asarray(eta_j_d, dtype=float) - np.asarray(eta_i_d, dtype=float) - np.asarray(off, dtype=float)
        delayed = delayed + np.tanh(gains.k_psi * arg)
    return delay_free, k_tau * delayed


def protocol_derivatives(gains: GainSet, topology: FormationTopology, eta_now,
                         eta_delayed, leader_pos, leader_vel, r):
    """Network-wide control and multiplex layer derivatives.

    ``eta_now``/``eta_delayed`` have shape ``(N, 2)``; ``r`` has shape
    ``(N, 2, 2)`` (agent, layer, axis).  Returns ``(u, r_dot)`` with
    ``u = v_l + nu_bar`` the full hand-velocity command.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 3 or r.shape[1] != N_LAYERS:
        raise ValueError(f"expected r of shape (N, {N_LAYERS}, 2), got {r.shape}")
    idx, mask, offs = topology.padded_neighbors
    e_l = leader_pos - eta_now - topology.leader_offsets
    arg = eta_delayed[idx] - eta_delayed[:, None, :] - offs
    sat = np.sum(np.tanh(gains.k_psi * arg) * mask[..., None], axis=1)
    u = leader_vel + gains.k0 * e_l + gains.k0_tau * sat + r[:, 0]
    r_dot = np.empty_like(r)
    r_dot[:, 0] = gains.k1 * e_l + gains.k1_tau * sat + r[:, 1]
    r_dot[:, 1] = gains.k2 * e_l + gains.k2_tau * sat
    return u, r_dot


def check_layer_order(disturbances, m=N_LAYERS):
    """Warn when a polynomial disturbance is beyond what ``m`` layers reject."""
    bad = [a for a, d in disturbances.items() if d.order > m]
    if bad:
        warnings.warn(
            f"agents {bad}: polynomial disturbance order exceeds {m - 1}; "
            "it will not be rejected", stacklevel=2)
    return not bad
