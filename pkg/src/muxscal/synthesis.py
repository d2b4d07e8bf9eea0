"""Gain synthesis for the robot protocol over a grid of transform parameters.

For fixed ``(alpha1, alpha2)`` the tight margins are explicit functions of
the gains: ``sigma_bar`` depends on ``k`` only and ``sigma_under`` on
``g_bar`` only, and ``sigma_under`` is absolutely homogeneous in
``g_bar``.  Maximizing ``g0 + g1 + g2`` therefore splits into

1. maximizing ``sigma_bar`` over ``k`` (random restarts in a log-uniform
   box followed by a batched pattern search), then
2. choosing the direction ``u`` of ``g_bar`` on the simplex that allows the
   longest feasible ray, the ray length being exact by homogeneity.

Feasibility of a candidate can also be checked on the semidefinite form of
the constraints, see :func:`lmi_feasible`.
"""

from __future__ import annotations

import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .certifier import Certificate, build_blocks, certify, robot_margins
from .linalg import induced_norm, matrix_measure, sym_eig_extremes, symmetric_part
from .protocol import GainSet

__all__ = [
    "AlphaResult",
    "GainInequality",
    "SynthesisProblem",
    "SynthesisResult",
    "default_alpha_grid",
    "grid_sweep",
    "lmi_feasible",
    "lmi_feasible_batch",
    "lmi_slacks",
    "lmi_witness",
    "solve_fixed_alpha",
]

VARIABLES = ("k0", "k1", "k2", "g0", "g1", "g2")
BOUNDARY_EPS = 1e-7
LMI_TOL = 1e-12


def default_alpha_grid():
    vals = np.round(np.linspace(-3.0, 0.0, 16), 10)
    return tuple((float(a1), float(a2)) for a1 in vals for a2 in vals)


_INEQ_RE = re.compile(
    r"^\s*([kg][0-2])\s*>=\s*(?:([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\*?\s*)?([kg][0-2])\s*$"
)


@dataclass(frozen=True)
class GainInequality:
    """``lhs >= factor * rhs`` over ``k0..k2`` and ``g0..g2`` (``g = k_psi * k_tau``)."""

    lhs: str
    factor: float
    rhs: str

    def __post_init__(self):
        for v in (self.lhs, self.rhs):
            if v not in VARIABLES:
                raise ValueError(f"unknown gain variable {v!r}")
        object.__setattr__(self, "factor", float(self.factor))

    @classmethod
    def parse(cls, text):
        m = _INEQ_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse gain inequality {text!r}")
        lhs, factor, rhs = m.groups()
        return cls(lhs, float(factor) if factor else 1.0, rhs)

    def __str__(self):
        return f"{self.lhs} >= {self.factor:g}*{self.rhs}"

    @property
    def coeffs(self):
        c = np.zeros(6)
        c[VARIABLES.index(self.lhs)] += 1.0
        c[VARIABLES.index(self.rhs)] -= self.factor
        return c

    def holds(self, k, g):
        return bool(self.coeffs @ np.concatenate([k, g]) >= 0.0)


@dataclass(frozen=True)
class SynthesisProblem:
    n_bar: int = 3
    alpha_grid: tuple = field(default_factory=default_alpha_grid)
    extra_constraints: tuple = ()
    k_psi: float = 0.1
    tau_max: float = 0.33
    k_box: tuple = (1e-2, 1e1)
    restarts: int = 64
    seeds_kept: int = 4
    max_iter: int = 200
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.alpha_grid:
            raise ValueError("alpha grid is empty")
        grid = tuple((float(a), float(b)) for a, b in self.alpha_grid)
        object.__setattr__(self, "alpha_grid", grid)
        cons = tuple(c if isinstance(c, GainInequality) else GainInequality.parse(c)
                     for c in self.extra_constraints)
        object.__setattr__(self, "extra_constraints", cons)
        lo, hi = self.k_box
        if not 0 < lo < hi:
            raise ValueError("k_box must satisfy 0 < lo < hi")
        if self.n_bar < 1 or not self.k_psi > 0:
            raise ValueError("need n_bar >= 1 and k_psi > 0")

    def to_dict(self):
        return {
            "n_bar": self.n_bar,
            "alpha_grid": [list(a) for a in self.alpha_grid],
            "extra_constraints": [str(c) for c in self.extra_constraints],
            "k_psi": self.k_psi,
            "tau_max": self.tau_max,
            "k_box": list(self.k_box),
            "restarts": self.restarts,
            "seeds_kept": self.seeds_kept,
            "max_iter": self.max_iter,
            "seed": self.seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "alpha_grid" in d:
            d["alpha_grid"] = tuple(tuple(a) for a in d["alpha_grid"])
        if "k_box" in d:
            d["k_box"] = tuple(d["k_box"])
        d["extra_constraints"] = tuple(d.get("extra_constraints", ()))
        return cls(**d)


@dataclass(frozen=True)
class AlphaResult:
    alpha: tuple
    feasible: bool
    cost: float
    gains: GainSet | None = None
    sigma_bar: float = float("nan")
    sigma_under: float = float("nan")


@dataclass(frozen=True)
class SynthesisResult:
    status: str
    best_gains: GainSet | None
    best_cost: float
    certificate: Certificate | None
    per_alpha: tuple

    def to_dict(self):
        return {
            "status": self.status,
            "best_gains": None if self.best_gains is None else self.best_gains.to_dict(),
            "best_cost": self.best_cost,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "per_alpha": [
                {"alpha1": r.alpha[0], "alpha2": r.alpha[1], "feasible": r.feasible,
                 "cost": r.cost, "sigma_bar": r.sigma_bar, "sigma_under": r.sigma_under,
                 "gains": None if r.gains is None else r.gains.to_dict()}
                for r in self.per_alpha
            ],
        }


def _split_constraints(constraints):
    C = np.array([c.coeffs for c in constraints]).reshape(-1, 6)
    return C[:, :3], C[:, 3:]


def _maximize_sigma_bar(problem, alpha, rng):
    """Random restarts plus batched compass/random-direction search on ``k``."""
    lo, hi = problem.k_box
    Ck, Cg = _split_constraints(problem.extra_constraints)
    # constraints on k alone must hold at g = 0; mixed ones are checked on the ray
    pure_k = np.all(Cg == 0.0, axis=1)
    Ck_pure = Ck[pure_k]

    def objective(k):
        val = robot_margins(k, np.zeros_like(k), alpha, problem.n_bar)[0]
        ok = np.all(k @ Ck_pure.T >= 0.0, axis=-1) if len(Ck_pure) else True
        return np.where(ok, val, -np.inf)

    samples = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(problem.restarts, 3)))
    vals = objective(samples)
    order = np.argsort(-vals, kind="stable")[: problem.seeds_kept]
    x = samples[order]
    fx = vals[order]
    if not np.any(np.isfinite(fx)):
        return None, -np.inf

    basis = np.vstack([np.eye(3), -np.eye(3)])
    step = np.full(len(x), 0.25 * (hi - lo) / 10.0)
    for _ in range(problem.max_iter):
        extra = rng.normal(size=(6, 3))
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
        dirs = np.vstack([basis, extra])
        polls = np.clip(x[:, None, :] + step[:, None, None] * dirs[None], lo, hi)
        fp = objective(polls.reshape(-1, 3)).reshape(len(x), len(dirs))
        best = np.argmax(fp, axis=1)
        fbest = fp[np.arange(len(x)), best]
        improved = fbest > fx
        x = np.where(improved[:, None], polls[np.arange(len(x)), best], x)
        fx = np.where(improved, fbest, fx)
        step = np.where(improved, step, 0.5 * step)
        if np.all(step < 1e-10):
            break
    i = int(np.argmax(fx))
    return x[i], float(fx[i])


def _ray_lengths(u, k, sigma_bar, problem, alpha):
    """Longest feasible ``s`` with ``g = s * u`` for each direction ``u``."""
    target = sigma_bar - BOUNDARY_EPS
    sig_u = robot_margins(np.broadcast_to(k, u.shape), u, alpha, problem.n_bar)[1]
    s_hi = np.where(sig_u > 0, target / np.where(sig_u > 0, sig_u, 1.0), np.inf)
    s_lo = np.zeros(len(u))
    Ck, Cg = _split_constraints(problem.extra_constraints)
    for ck, cg in zip(Ck, Cg):
        a = float(ck @ k)
        b = u @ cg
        with np.errstate(divide="ignore", invalid="ignore"):
            s_hi = np.where(b < 0, np.minimum(s_hi, a / -b), s_hi)
            s_lo = np.where(b > 0, np.maximum(s_lo, -a / b), s_lo)
        s_hi = np.where((b == 0) & (a < 0), -np.inf, s_hi)
    ok = (s_hi >= s_lo) & (s_hi > 0) & np.all(u >= 0, axis=1) & np.isfinite(s_hi)
    return np.where(ok, s_hi, -np.inf)


def _maximize_ray(k, sigma_bar, problem, alpha):
    seeds = np.array([[1, 1, 1], [1, 0, 0], [0, 1, 0], [0, 0, 1],
                      [1, 1, 0], [1, 0, 1], [0, 1, 1], [4, 1, 1]], dtype=float)
    u = seeds / seeds.sum(axis=1, keepdims=True)
    fu = _ray_lengths(u, k, sigma_bar, problem, alpha)
    dirs = np.array([[1, -1, 0], [-1, 1, 0], [1, 0, -1], [-1, 0, 1], [0, 1, -1], [0, -1, 1]],
                    dtype=float)
    step = np.full(len(u), 0.25)
    for _ in range(problem.max_iter):
        polls = np.clip(u[:, None, :] + step[:, None, None] * dirs[None], 0.0, None)
        polls /= polls.sum(axis=2, keepdims=True)
        fp = _ray_lengths(polls.reshape(-1, 3), k, sigma_bar, problem, alpha).reshape(len(u), -1)
        best = np.argmax(fp, axis=1)
        fbest = fp[np.arange(len(u)), best]
        improved = fbest > fu
        u = np.where(improved[:, None], polls[np.arange(len(u)), best], u)
        fu = np.where(improved, fbest, fu)
        step = np.where(improved, step, 0.5 * step)
        if np.all(step < 1e-10):
            break
    i = int(np.argmax(fu))
    return u[i] * fu[i], float(fu[i])


def solve_fixed_alpha(problem: SynthesisProblem, alpha, index=0) -> AlphaResult:
    """Best certified gains for one transform pair.

    ``index`` seeds the random stream so results do not depend on the
    order or concurrency in which grid points are solved.
    """
    alpha = (float(alpha[0]), float(alpha[1]))
    rng = np.random.default_rng([problem.seed, index])
    infeasible = AlphaResult(alpha, False, float("inf"))
    k, sigma_bar = _maximize_sigma_bar(problem, alpha, rng)
    if k is None or not sigma_bar > BOUNDARY_EPS:
        return infeasible
    g, length = _maximize_ray(k, sigma_bar, problem, alpha)
    if not np.isfinite(length) or length <= 0:
        return infeasible
    gains = GainSet.from_gbar(k, g, problem.k_psi, alpha)
    cert = certify(gains, problem.n_bar, problem.tau_max)
    ok = (cert.feasible and gains.sign_constraints_ok()
          and all(c.holds(gains.k, gains.g_bar) for c in problem.extra_constraints))
    if not ok:
        return infeasible
    return AlphaResult(alpha, True, -float(np.sum(gains.g_bar)), gains,
                       cert.sigma_bar, cert.sigma_under)


def _solve_indexed(args):
    problem, idx, alpha = args
    return solve_fixed_alpha(problem, alpha, idx)


def grid_sweep(problem: SynthesisProblem) -> SynthesisResult:
    """Solve every grid point and keep the lowest cost (first on ties)."""
    jobs = [(problem, i, a) for i, a in enumerate(problem.alpha_grid)]
    if problem.workers > 1:
        with ProcessPoolExecutor(max_workers=problem.workers) as ex:
            results = list(ex.map(_solve_indexed, jobs))
    else:
        results = [_solve_indexed(j) for j in jobs]
    feasible = [r for r in results if r.feasible]
    if not feasible:
        return SynthesisResult("infeasible", None, float("inf"), None, tuple(results))
    best = min(feasible, key=lambda r: r.cost)
    cert = certify(best.gains, problem.n_bar, problem.tau_max)
    return SynthesisResult("ok", best.gains, best.cost, cert, tuple(results))


def _sign_ok(k, g, sigma_bar, sigma_under):
    return (np.all(k >= 0, axis=-1) & np.all(g >= 0, axis=-1) & np.all(k + g > 0, axis=-1)
            & (sigma_bar > 0) & (sigma_under >= 0) & (sigma_bar - sigma_under > 0))


def _transformed_blocks(k, g, alpha, n_bar):
    """Batched 6x6 transformed blocks ``(T A T^-1, T B_ij T^-1, T B_ii T^-1)``."""
    k, g, alpha = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (k, g, alpha))
    n = max(len(k), len(g), len(alpha))
    k, g, alpha = (np.broadcast_to(x, (n, x.shape[1])) for x in (k, g, alpha))
    out = []
    for i in range(n):
        bj = build_blocks(GainSet.from_gbar(k[i], g[i], 1.0, alpha[i]), n_bar)
        out.append((bj.transformed(bj.A_bar_ii), bj.transformed(bj.B_tilde_ij),
                    bj.transformed(bj.B_tilde_ii)))
    A, Bij, Bii = (np.stack(x) for x in zip(*out))
    return A, Bij, Bii, k, g


def lmi_slacks(k, g, sigma_bar, sigma_under, alpha, n_bar):
    """Slack of each constraint in norm form; all >= 0 iff LMI-feasible.

    Columns: contraction, cross-block norm, self-block norm.
    """
    A, Bij, Bii, _, _ = _transformed_blocks(k, g, alpha, n_bar)
    sigma_bar = np.broadcast_to(np.asarray(sigma_bar, float), (len(A),))
    sigma_under = np.broadcast_to(np.asarray(sigma_under, float), (len(A),))
    return np.column_stack([
        -sigma_bar - matrix_measure(A, 2),
        sigma_under / (2 * n_bar) - induced_norm(Bij, 2),
        sigma_under / 2 - induced_norm(Bii, 2),
    ])


def _schur(M, s):
    n = M.shape[-1]
    eye = np.eye(n)
    top = np.concatenate([s[:, None, None] * eye, np.swapaxes(M, -1, -2)], axis=-1)
    bot = np.concatenate([M, s[:, None, None] * eye], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def lmi_feasible_batch(k, g, sigma_bar, sigma_under, alpha, n_bar, method="norm",
                       tol=LMI_TOL):
    """Vectorized LMI feasibility of ``(k, g_bar, sigma_bar, sigma_under, alpha)``.

    ``method="norm"`` compares measures and 2-norms against thresholds;
    ``method="schur"`` tests the assembled semidefinite blocks through their
    smallest eigenvalue.  Both accept violations up to ``tol`` so that
    margins computed from the same gains test as feasible despite rounding.
    """
    A, Bij, Bii, kk, gg = _transformed_blocks(k, g, alpha, n_bar)
    n = len(A)
    sb = np.broadcast_to(np.asarray(sigma_bar, float), (n,)).copy()
    su = np.broadcast_to(np.asarray(sigma_under, float), (n,)).copy()
    signs = _sign_ok(kk, gg, sb, su)
    if method == "norm":
        c1 = matrix_measure(A, 2) <= -sb + tol
        c2 = induced_norm(Bij, 2) <= su / (2 * n_bar) + tol
        c3 = induced_norm(Bii, 2) <= su / 2 + tol
    elif method == "schur":
        c1 = sym_eig_extremes(-sb[:, None, None] * np.eye(6) - symmetric_part(A))[0] >= -tol
        c2 = sym_eig_extremes(_schur(Bij, su / (2 * n_bar)))[0] >= -tol
        c3 = sym_eig_extremes(_schur(Bii, su / 2))[0] >= -tol
    else:
        raise ValueError(f"unknown method {method!r}")
    return signs & c1 & c2 & c3


def lmi_feasible(gains: GainSet, sigma_bar, sigma_under, alpha=None, n_bar=3, method="norm",
                 tol=LMI_TOL):
    """Whether ``gains`` with margins ``(sigma_bar, sigma_under)`` satisfy the LMIs."""
    alpha = gains.alpha if alpha is None else alpha
    vals = (sigma_bar, sigma_under, *alpha)
    if not all(np.isfinite(v) for v in vals):
        return False
    return bool(lmi_feasible_batch(gains.k, gains.g_bar, sigma_bar, sigma_under,
                                   alpha, n_bar, method, tol)[0])


def lmi_witness(cert: Certificate):
    """A strictly feasible ``(sigma_bar, sigma_under)`` pair for a feasible certificate."""
    if not cert.feasible:
        raise ValueError("certificate is infeasible")
    return cert.sigma_bar, 0.5 * (cert.sigma_bar + cert.sigma_under)

