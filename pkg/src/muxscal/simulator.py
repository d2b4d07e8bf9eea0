"""Fixed-step simulation of the delayed closed-loop formation.

The integrator is classical RK4.  Delayed positions are read from a
history of completed steps, which is valid as long as every step is shorter
than the smallest delay (method of steps).  The history is interpolated by
cubic Hermite pieces using the derivative already computed by the first RK4
stage; plain linear interpolation is available for comparison but limits
the scheme to second order and makes the error constant depend on how the
delay aligns with the step grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .certifier import Certificate
from .halanay import iss_bound
from .protocol import (
    N_LAYERS,
    DisturbanceSpec,
    FormationTopology,
    GainSet,
    build_topology,
    check_layer_order,
    polynomial_offsets,
    protocol_derivatives,
)

__all__ = [
    "ClosedLoop",
    "DelayProfile",
    "HistoryBuffer",
    "HistoryUnderrun",
    "LeaderTrajectory",
    "SimConfig",
    "SimMetrics",
    "SimState",
    "SimulationBlowUp",
    "SweepResult",
    "desired_solution",
    "formation_sweep",
    "hand_position",
    "iss_bound_trace",
    "leader_trajectory",
    "run",
    "step",
    "unicycle_inputs",
    "unicycle_mode_step",
]


class HistoryUnderrun(RuntimeError):
    """A delayed lookup fell outside the stored history."""


class SimulationBlowUp(RuntimeError):
    """The state left the finite range; carries the time and 1-based agent id."""

    def __init__(self, t, agent_id, value):
        super().__init__(f"state blow-up at t={t:.6g} s on agent {agent_id} (|x|={value:.3g})")
        self.t = t
        self.agent_id = agent_id
        self.value = value


# ---------------------------------------------------------------- leader


@dataclass(frozen=True)
class LeaderTrajectory:
    """Virtual leader path with an analytic velocity.

    ``kind`` is one of:

    * ``"stationary"``: ``params = {"position": [x, y]}``
    * ``"circle"``: ``{"center", "radius", "omega", "phase"}``
    * ``"rounded_rectangle"``: ``{"center", "width", "height", "corner_radius",
      "speed"}``; straight sides joined by quarter circles, traversed
      counter-clockwise at constant speed, so the velocity is continuous.
    """

    kind: str = "stationary"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = dict(self.params)
        if self.kind == "stationary":
            p.setdefault("position", [0.0, 0.0])
        elif self.kind == "circle":
            p.setdefault("center", [0.0, 0.0])
            p.setdefault("radius", 1.0)
            p.setdefault("omega", 0.1)
            p.setdefault("phase", 0.0)
            if p["radius"] < 0:
                raise ValueError("circle radius must be non-negative")
        elif self.kind == "rounded_rectangle":
            p.setdefault("center", [0.0, 0.0])
            p.setdefault("width", 4.0)
            p.setdefault("height", 2.0)
            p.setdefault("corner_radius", 0.5)
            p.setdefault("speed", 0.1)
            rc = p["corner_radius"]
            if not 0 < rc <= 0.5 * min(p["width"], p["height"]):
                raise ValueError("corner_radius must lie in (0, min(width, height)/2]")
        else:
            raise ValueError(f"unknown leader kind {self.kind!r}")
        object.__setattr__(self, "params", p)

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "params"}
        if unknown:
            raise KeyError(f"unknown leader fields: {', '.join(sorted(unknown))}")
        return cls(d.get("kind", "stationary"), dict(d.get("params", {})))

    def __call__(self, t):
        return leader_trajectory(self, t)


def _rr_pieces(p):
    rc = p["corner_radius"]
    a = 0.5 * p["width"] - rc
    b = 0.5 * p["height"] - rc
    # pieces: (length, kind, data) starting at (a + rc, -b) heading +y
    arc = 0.5 * math.pi * rc
    return [
        (2 * b, "line", ((a + rc, -b), (0.0, 1.0))),
        (arc, "arc", ((a, b), 0.0)),
        (2 * a, "line", ((a, b + rc), (-1.0, 0.0))),
        (arc, "arc", ((-a, b), 0.5 * math.pi)),
        (2 * b, "line", ((-a - rc, b), (0.0, -1.0))),
        (arc, "arc", ((-a, -b), math.pi)),
        (2 * a, "line", ((-a, -b - rc), (1.0, 0.0))),
        (arc, "arc", ((a, -b), 1.5 * math.pi)),
    ]


def _rounded_rectangle_scalar(p, t):
    # called four times per integration step, so plain floats
    pieces = _rr_pieces(p)
    rc, v = p["corner_radius"], p["speed"]
    cx, cy = p["center"]
    s = v * t % sum(L for L, _, _ in pieces)
    for i, (L, kind, data) in enumerate(pieces):
        if s < L or i == len(pieces) - 1:
            break
        s -= L
    if kind == "line":
        (x0, y0), (dx, dy) = data
        return (np.array([cx + x0 + dx * s, cy + y0 + dy * s]), np.array([dx * v, dy * v]))
    (xc, yc), phi0 = data
    phi = phi0 + s / rc
    c, sn = math.cos(phi), math.sin(phi)
    return np.array([cx + xc + rc * c, cy + yc + rc * sn]), np.array([-v * sn, v * c])


def _rounded_rectangle(p, t):
    pieces = _rr_pieces(p)
    rc = p["corner_radius"]
    cx, cy = p["center"]
    perimeter = sum(L for L, _, _ in pieces)
    v = p["speed"]
    s = np.mod(v * np.asarray(t, dtype=float), perimeter)
    pos = np.zeros(s.shape + (2,))
    vel = np.zeros(s.shape + (2,))
    start = 0.0
    for L, kind, data in pieces:
        sel = (s >= start) & (s < start + L)
        u = s[sel] - start
        if kind == "line":
            (x0, y0), (dx, dy) = data
            pos[sel] = np.column_stack([x0 + dx * u, y0 + dy * u])
            vel[sel] = np.array([dx, dy]) * v
        else:
            (xc, yc), phi0 = data
            phi = phi0 + u / rc
            pos[sel] = np.column_stack([xc + rc * np.cos(phi), yc + rc * np.sin(phi)])
            vel[sel] = v * np.column_stack([-np.sin(phi), np.cos(phi)])
        start += L
    pos += np.array([cx, cy])
    return pos, vel


def leader_trajectory(desc: LeaderTrajectory, t):
    """Leader hand position and velocity at ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    p = desc.params
    if desc.kind == "stationary":
        pos = np.broadcast_to(np.asarray(p["position"], dtype=float), t.shape + (2,)).copy()
        return pos, np.zeros(t.shape + (2,))
    if desc.kind == "circle":
        R, w, ph = p["radius"], p["omega"], p["phase"]
        ang = w * t + ph
        pos = np.stack([R * np.cos(ang), R * np.sin(ang)], axis=-1) + np.asarray(p["center"])
        vel = np.stack([-R * w * np.sin(ang), R * w * np.cos(ang)], axis=-1)
        return pos, vel
    if desc.kind == "rounded_rectangle":
        if t.ndim == 0:
            return _rounded_rectangle_scalar(p, float(t))
        pos, vel = _rounded_rectangle(p, np.atleast_1d(t))
        return pos.reshape(t.shape + (2,)), vel.reshape(t.shape + (2,))
    raise ValueError(f"unknown leader kind {desc.kind!r}")


def desired_solution(topology: FormationTopology, leader: LeaderTrajectory, t):
    """Desired hand positions ``eta_l(t) - delta_li`` of all agents, shape ``(N, 2)``."""
    pos, _ = leader_trajectory(leader, t)
    return pos[..., None, :] - topology.leader_offsets


# ---------------------------------------------------------------- delay


@dataclass(frozen=True)
class DelayProfile:
    """Common communication delay ``tau(t)``.

    ``kind="constant"`` gives ``tau_max``; ``kind="sinusoidal"`` gives
    ``tau_max - amp * (1 + sin(omega t)) / 2``, which stays in
    ``[tau_max - amp, tau_max]``.
    """

    tau_max: float = 0.33
    kind: str = "constant"
    amp: float = 0.0
    omega: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if not self.tau_max >= 0 or not math.isfinite(self.tau_max):
            raise ValueError("tau_max must be finite and non-negative")
        if self.kind == "sinusoidal" and not 0 <= self.amp <= self.tau_max:
            raise ValueError("delay amplitude must lie in [0, tau_max]")

    @property
    def tau_min(self):
        return self.tau_max - (self.amp if self.kind == "sinusoidal" else 0.0)

    def __call__(self, t):
        if self.kind == "constant":
            return self.tau_max
        return self.tau_max - 0.5 * self.amp * (1.0 + math.sin(self.omega * t))

    def to_dict(self):
        d = {"tau_max": self.tau_max, "kind": self.kind}
        if self.kind == "sinusoidal":
            d.update(amp=self.amp, omega=self.omega)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------- history


class HistoryBuffer:
    """Ring of past samples with piecewise interpolation.

    Every sample is written twice, at ``k`` and ``k + capacity``, so the last
    ``capacity`` samples always form one contiguous slice and lookups need
    a single ``searchsorted``.  Before the first sample the constant initial
    function (the first sample) is returned.

    ``interpolation="linear"`` joins samples by straight lines;
    ``"hermite"`` uses cubic Hermite pieces built from derivatives supplied
    through :meth:`set_derivative`.
    """

    def __init__(self, capacity, shape, interpolation="linear"):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        if interpolation not in ("linear", "hermite"):
            raise ValueError(f"unknown interpolation {interpolation!r}")
        self.capacity = int(capacity)
        self.shape = tuple(shape)
        self.interpolation = interpolation
        self._t = np.empty(2 * self.capacity)
        self._x = np.empty((2 * self.capacity,) + self.shape)
        self._dx = np.full((2 * self.capacity,) + self.shape, np.nan)
        self.count = 0

    def push(self, t, x, dx=None):
        if self.count and not t > self.latest_time:
            raise ValueError("history times must be strictly increasing")
        k = self.count % self.capacity
        self._t[k] = self._t[k + self.capacity] = t
        self._x[k] = self._x[k + self.capacity] = x
        self._dx[k] = self._dx[k + self.capacity] = np.nan if dx is None else dx
        self.count += 1

    def set_derivative(self, dx):
        """Attach the time derivative to the latest sample."""
        k = (self.count - 1) % self.capacity
        self._dx[k] = self._dx[k + self.capacity] = dx

    def _window(self):
        n = min(self.count, self.capacity)
        end = (self.count - 1) % self.capacity + self.capacity + 1
        return self._t[end - n:end], self._x[end - n:end], self._dx[end - n:end]

    @property
    def latest_time(self):
        return self._t[(self.count - 1) % self.capacity]

    @property
    def span(self):
        ts = self._window()[0]
        return float(ts[0]), float(ts[-1])

    def lookup(self, s):
        if self.count == 0:
            raise HistoryUnderrun("history is empty")
        ts, xs, dxs = self._window()
        if s > ts[-1]:
            if s - ts[-1] <= 1e-12 * max(1.0, abs(s)):
                return xs[-1].copy()
            raise HistoryUnderrun(f"lookup at {s:.6g} beyond latest sample {ts[-1]:.6g}")
        if s <= ts[0]:
            if self.count <= self.capacity:
                return xs[0].copy()
            if s < ts[0]:
                raise HistoryUnderrun(f"lookup at {s:.6g} before retained span {ts[0]:.6g}")
        j = int(np.searchsorted(ts, s, side="right"))
        if j >= len(ts):
            return xs[-1].copy()
        t0, t1 = ts[j - 1], ts[j]
        w = (s - t0) / (t1 - t0)
        if self.interpolation == "linear":
            return (1.0 - w) * xs[j - 1] + w * xs[j]
        d0, d1 = dxs[j - 1], dxs[j]
        if np.isnan(d0).any() or np.isnan(d1).any():
            raise HistoryUnderrun(f"derivative missing near {s:.6g}")
        dt = t1 - t0
        h00 = (1 + 2 * w) * (1 - w) ** 2
        h10 = w * (1 - w) ** 2
        h01 = w * w * (3 - 2 * w)
        h11 = w * w * (w - 1)
        return h00 * xs[j - 1] + h10 * dt * d0 + h01 * xs[j] + h11 * dt * d1


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``disturbances`` maps 1-based agent ids to specs.  ``init_mode`` is
    ``"desired"`` (start on the formation, integrators at zero) or
    ``"perturbed"`` (positions displaced uniformly by up to
    ``perturbation`` metres per axis).  ``jitter`` scales the step by
    ``1 + U(-jitter, jitter)``.  ``mode="unicycle"`` integrates the wheel
    kinematics behind the hand-position map.
    """

    step: float = 0.01
    duration: float = 60.0
    delay: DelayProfile = field(default_factory=DelayProfile)
    leader: LeaderTrajectory = field(default_factory=LeaderTrajectory)
    disturbances: dict = field(default_factory=dict)
    init_mode: str = "desired"
    perturbation: float = 0.1
    seed: int = 0
    jitter: float = 0.0
    mode: str = "hand"
    hand_length: float = 0.05
    initial_heading: float = 0.0
    record_every: int = 1
    blowup_threshold: float = 1e6
    interpolation: str = "hermite"

    def __post_init__(self):
        if not self.step > 0 or not self.duration > 0:
            raise ValueError("step and duration must be positive")
        if self.init_mode not in ("desired", "perturbed"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.mode not in ("hand", "unicycle"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "unicycle" and not self.hand_length > 0:
            raise ValueError("hand_length must be positive")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.delay.tau_max > 0 and not self.max_step < self.delay.tau_min:
            raise ValueError(
                f"step {self.max_step:g} must be shorter than the smallest delay "
                f"{self.delay.tau_min:g}")
        dist = {}
        for k, v in dict(self.disturbances).items():
            if int(k) < 1:
                raise ValueError("agent ids are 1-based")
            dist[int(k)] = v if isinstance(v, DisturbanceSpec) else DisturbanceSpec.from_dict(v)
        object.__setattr__(self, "disturbances", dist)

    @property
    def max_step(self):
        return self.step * (1.0 + self.jitter)

    def with_(self, **kw):
        return replace(self, **kw)


# ---------------------------------------------------------------- dynamics


@dataclass
class SimState:
    """Network state: hand positions ``eta (N, 2)``, integrators ``r (N, 2, 2)``
    and, in unicycle mode, headings ``theta (N,)``."""

    eta: np.ndarray
    r: np.ndarray
    theta: np.ndarray | None = None

    def copy(self):
        return SimState(self.eta.copy(), self.r.copy(),
                        None if self.theta is None else self.theta.copy())


def _heading(theta):
    return np.column_stack([np.cos(theta), np.sin(theta)])


def hand_position(p, theta, l):
    """Point at distance ``l`` ahead of the wheel axis."""
    return np.asarray(p, dtype=float) + l * _heading(np.atleast_1d(theta))


def unicycle_inputs(theta, nu, l):
    """``(v, Omega)`` that make the hand velocity equal ``nu``.

    Inverse of ``[[cos, -l sin], [sin, l cos]]``, whose determinant is ``l``.
    """
    if not l > 0:
        raise ValueError("hand length must be positive")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    c, s = np.cos(theta), np.sin(theta)
    return c * nu[:, 0] + s * nu[:, 1], (-s * nu[:, 0] + c * nu[:, 1]) / l


class ClosedLoop:
    """Right-hand side and RK4 stepping for one formation and gain set."""

    def __init__(self, config: SimConfig, gains: GainSet, topology: FormationTopology):
        self.config = config
        self.gains = gains
        self.topology = topology
        n = topology.n_agents
        bad = [a for a in config.disturbances if a > n]
        if bad:
            raise ValueError(f"disturbed agents {bad} not in a formation of {n} agents")
        check_layer_order(config.disturbances, N_LAYERS)
        self._dist_ids = sorted(config.disturbances)
        order = max([config.disturbances[a].order for a in self._dist_ids] + [0])
        self._poly = np.zeros((n, order, 2))
        res_idx, res = [], []
        for a in self._dist_ids:
            spec = config.disturbances[a]
            self._poly[a - 1, : spec.order] = spec.poly_coeffs
            for w in spec.residual_terms:
                res_idx.append(a - 1)
                res.append((w.amp, w.omega, w.decay, w.phase))
        self._res_idx = np.array(res_idx, dtype=int)
        self._res_amp = np.array([r[0] for r in res]).reshape(-1, 2)
        self._res_par = np.array([r[1:] for r in res]).reshape(-1, 3)

    def disturbance(self, t, residual=True):
        d = np.zeros((self.topology.n_agents, 2))
        for q in range(self._poly.shape[1] - 1, -1, -1):
            d = d * t + self._poly[:, q]
        if residual and len(self._res_idx):
            om, dec, ph = self._res_par.T
            vals = (np.sin(om * t + ph) * np.exp(-dec * t))[:, None] * self._res_amp
            np.add.at(d, self._res_idx, vals)
        return d

    def _delayed(self, t, eta_stage, history):
        tau = self.config.delay(t)
        if tau == 0.0:
            return eta_stage
        return history.lookup(t - tau)

    def hand_rhs(self, t, eta, r, history):
        lpos, lvel = leader_trajectory(self.config.leader, t)
        u, r_dot = protocol_derivatives(self.gains, self.topology, eta,
                                        self._delayed(t, eta, history), lpos, lvel, r)
        return u + self.disturbance(t), r_dot, u

    def _rhs(self, t, y, history):
        if self.config.mode == "hand":
            eta, r = y
            eta_dot, r_dot, _ = self.hand_rhs(t, eta, r, history)
            self._eta_dot = eta_dot
            return eta_dot, r_dot
        p, theta, r = y
        l = self.config.hand_length
        eta = p + l * _heading(theta)
        self._eta_dot, r_dot, nu = self.hand_rhs(t, eta, r, history)
        v, omega = unicycle_inputs(theta, nu, l)
        p_dot = v[:, None] * _heading(theta) + self.disturbance(t)
        return p_dot, omega, r_dot

    def _pack(self, state):
        if self.config.mode == "hand":
            return (state.eta, state.r)
        p = state.eta - self.config.hand_length * _heading(state.theta)
        return (p, state.theta, state.r)

    def _unpack(self, y):
        if self.config.mode == "hand":
            return SimState(y[0], y[1])
        p, theta, r = y
        return SimState(p + self.config.hand_length * _heading(theta), r, theta)

    def step(self, state: SimState, history: HistoryBuffer, t, h):
        """One RK4 step; ``history`` must already hold the sample at ``t``."""
        y = self._pack(state)
        k1 = self._rhs(t, y, history)
        if history.count and history.latest_time == t:
            history.set_derivative(self._eta_dot)
        k2 = self._rhs(t + h / 2, tuple(a + h / 2 * b for a, b in zip(y, k1)), history)
        k3 = self._rhs(t + h / 2, tuple(a + h / 2 * b for a, b in zip(y, k2)), history)
        k4 = self._rhs(t + h, tuple(a + h * b for a, b in zip(y, k3)), history)
        y_new = tuple(a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
                      for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
        return self._unpack(y_new)

    def zeta(self, t, r):
        """Zeta coordinates ``(N, layers, 2)``; undisturbed agents have ``zeta = r``."""
        z = np.array(r, dtype=float, copy=True)
        for a in self._dist_ids:
            z[a - 1] += polynomial_offsets(self.config.disturbances[a], N_LAYERS, t)
        return z

    def initial_state(self):
        cfg = self.config
        n = self.topology.n_agents
        eta0 = desired_solution(self.topology, cfg.leader, 0.0)
        if cfg.init_mode == "perturbed":
            rng = np.random.default_rng([cfg.seed, 1])
            eta0 = eta0 + rng.uniform(-cfg.perturbation, cfg.perturbation, size=(n, 2))
        theta = np.full(n, float(cfg.initial_heading)) if cfg.mode == "unicycle" else None
        return SimState(eta0, np.zeros((n, N_LAYERS, 2)), theta)

    def new_history(self):
        cfg = self.config
        h_min = cfg.step * (1.0 - cfg.jitter)
        cap = int(math.ceil(cfg.delay.tau_max / h_min)) + 4
        return HistoryBuffer(cap, (self.topology.n_agents, 2), self.config.interpolation)


def step(state: SimState, history: HistoryBuffer, config: SimConfig, gains: GainSet,
         topology: FormationTopology, t, h=None):
    """Advance the hand-position closed loop by one RK4 step."""
    if config.mode != "hand":
        config = config.with_(mode="hand")
    return ClosedLoop(config, gains, topology).step(state, history, t,
                                                    config.step if h is None else h)


def unicycle_mode_step(state: SimState, history: HistoryBuffer, config: SimConfig,
                       gains: GainSet, topology: FormationTopology, t, h=None):
    """Advance the unicycle closed loop by one RK4 step.

    ``state.theta`` must be set; the hand position is reported in ``eta``.
    """
    if state.theta is None:
        raise ValueError("unicycle mode needs headings")
    if config.mode != "unicycle":
        config = config.with_(mode="unicycle")
    return ClosedLoop(config, gains, topology).step(state, history, t,
                                                    config.step if h is None else h)


# ---------------------------------------------------------------- metrics


@dataclass
class SimMetrics:
    """Recorded traces.

    ``deviation[k, i]`` is the hand-position error of agent ``i`` (m) at
    ``times[k]``; ``zeta_norms[k, i, layer]`` are the zeta-coordinate norms.
    """

    times: np.ndarray
    deviation: np.ndarray
    zeta_norms: np.ndarray
    circle_of: np.ndarray
    final_error: np.ndarray
    final_r: np.ndarray
    final_zeta: np.ndarray
    initial_zeta_sup: float = 0.0
    initial_dev_sup: float = 0.0

    @property
    def n_agents(self):
        return self.deviation.shape[1]

    def per_circle_max(self):
        """``{circle: max deviation}`` over all recorded times."""
        agent_max = self.deviation.max(axis=0)
        return {int(c): float(agent_max[self.circle_of == c].max())
                for c in np.unique(self.circle_of)}

    def global_max(self):
        return float(self.deviation.max())

    def terminal_max(self):
        return float(self.deviation[-1].max())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "agent_id", "circle_id", "dev_m", "zeta1_norm", "zeta2_norm"])
            for k, t in enumerate(self.times):
                for i in range(self.n_agents):
                    w.writerow([f"{t:.17g}", i + 1, int(self.circle_of[i]),
                                f"{self.deviation[k, i]:.17g}",
                                f"{self.zeta_norms[k, i, 0]:.17g}",
                                f"{self.zeta_norms[k, i, 1]:.17g}"])

    def write_summary_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["circle_id", "max_dev_m"])
            for c, v in self.per_circle_max().items():
                w.writerow([c, f"{v:.17g}"])


def run(config: SimConfig, gains: GainSet, topology: FormationTopology) -> SimMetrics:
    """Integrate from ``t = 0`` to ``duration`` and collect metrics."""
    loop = ClosedLoop(config, gains, topology)
    state = loop.initial_state()
    hist = loop.new_history()
    rng = np.random.default_rng([config.seed, 2])
    n_steps = int(round(config.duration / config.step))
    times, dev, znorm = [], [], []

    def record(t, st):
        times.append(t)
        err = st.eta - desired_solution(topology, config.leader, t)
        dev.append(np.linalg.norm(err, axis=1))
        znorm.append(np.linalg.norm(loop.zeta(t, st.r), axis=2))

    # constant initial functions: the zeta sup over [-tau_max, 0] uses the
    # disturbance polynomial evaluated on that interval
    pre = np.linspace(-config.delay.tau_max, 0.0, 33)
    zeta0 = max(float(np.max(np.sum(np.linalg.norm(loop.zeta(s, state.r), axis=2), axis=1)))
                for s in pre)
    dev0 = float(np.max(np.linalg.norm(
        state.eta - desired_solution(topology, config.leader, 0.0), axis=1)))

    t = 0.0
    n = 0
    hist.push(t, state.eta)
    record(t, state)
    while True:
        if config.jitter:
            remaining = config.duration - t
            if remaining <= 1e-9 * config.step:
                break
            h = config.step * (1.0 + rng.uniform(-config.jitter, config.jitter))
            h = min(h, remaining)
            t_next = config.duration if h == remaining else t + h
        elif n == n_steps:
            break
        else:
            h = config.step
            # from the index, to avoid drift
            t_next = (n + 1) * config.step
        state = loop.step(state, hist, t, h)
        n += 1
        t = t_next
        mag = np.abs(state.eta).max(axis=1) + np.abs(state.r).max(axis=(1, 2))
        worst = int(np.argmax(mag))
        if not np.isfinite(mag[worst]) or mag[worst] > config.blowup_threshold:
            raise SimulationBlowUp(t, worst + 1, float(mag[worst]))
        hist.push(t, state.eta)
        if n % config.record_every == 0:
            record(t, state)
    if times[-1] != t:
        record(t, state)

    final_err = state.eta - desired_solution(topology, config.leader, t)
    return SimMetrics(np.array(times), np.array(dev), np.array(znorm),
                      np.asarray(topology.circle_of), final_err, state.r.copy(),
                      loop.zeta(t, state.r), zeta0, dev0)


def iss_bound_trace(cert: Certificate, config: SimConfig, metrics: SimMetrics):
    """Deviation bound evaluated at ``metrics.times``.

    The residual sup is taken over the simulated horizon and the initial
    term uses the sup of the initial deviation plus the summed zeta norms
    on the initial interval.
    """
    w_sup = max([config.disturbances[a].residual_sup(config.duration)
                 for a in config.disturbances] + [0.0])
    return iss_bound(cert.coeffs, w_sup, metrics.initial_dev_sup,
                     metrics.initial_zeta_sup, metrics.times)


@dataclass
class SweepResult:
    n_circles: np.ndarray
    global_max: np.ndarray
    per_circle: list
    aggregate: dict

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_circles", "global_max_dev_m"])
            for n, g in zip(self.n_circles, self.global_max):
                w.writerow([int(n), f"{g:.17g}"])

    def write_summary_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["circle_id", "max_dev_m"])
            for c, v in sorted(self.aggregate.items()):
                w.writerow([c, f"{v:.17g}"])


def formation_sweep(config: SimConfig, gains: GainSet, circles, radius_step=0.2, n_bar=3):
    """Run one simulation per formation size.

    Returns the per-size global maxima and, per circle, the largest
    deviation across all runs containing it.
    """
    circles = [int(c) for c in circles]
    gmax, per = [], []
    agg: dict = {}
    for n in circles:
        m = run(config, gains, build_topology(n, radius_step, n_bar))
        gmax.append(m.global_max())
        pc = m.per_circle_max()
        per.append(pc)
        for c, v in pc.items():
            agg[c] = max(agg.get(c, 0.0), v)
    return SweepResult(np.array(circles), np.array(gmax), per, agg)
