"""JSON run configuration shared by the command-line workflows."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .protocol import DisturbanceSpec, GainSet, build_topology
from .simulator import DelayProfile, LeaderTrajectory, SimConfig
from .synthesis import SynthesisProblem

__all__ = ["ConfigError", "RunConfig", "config_digest", "load_config", "parse_config"]

TOP_LEVEL = ("gains", "topology", "delay", "disturbances", "leader", "sim", "seed", "synthesis")
TOPOLOGY_KEYS = ("n_circles", "radius_step", "n_bar")
SIM_KEYS = ("step", "duration", "init_mode", "perturbation", "jitter", "mode", "hand_length",
            "initial_heading", "record_every", "blowup_threshold", "interpolation")


class ConfigError(ValueError):
    """Invalid configuration; ``line``/``column`` are set for JSON syntax errors."""

    def __init__(self, msg, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(msg + where)
        self.line = line
        self.column = column


def _check_keys(section, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"'{section}' must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class RunConfig:
    gains: GainSet | None = None
    topology: dict = field(default_factory=lambda: {"n_circles": 2, "radius_step": 0.2, "n_bar": 3})
    delay: DelayProfile = field(default_factory=DelayProfile)
    disturbances: tuple = ()
    leader: LeaderTrajectory = field(default_factory=LeaderTrajectory)
    sim: dict = field(default_factory=dict)
    seed: int = 0
    synthesis: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        _check_keys("<root>", d, TOP_LEVEL)
        try:
            gains = GainSet.from_dict(d["gains"]) if "gains" in d else None
            topo = {"n_circles": 2, "radius_step": 0.2, "n_bar": 3}
            _check_keys("topology", d.get("topology", {}), TOPOLOGY_KEYS)
            topo.update(d.get("topology", {}))
            topo = {"n_circles": int(topo["n_circles"]), "radius_step": float(topo["radius_step"]),
                    "n_bar": int(topo["n_bar"])}
            delay = DelayProfile.from_dict(d.get("delay", {}))
            dists = []
            for entry in d.get("disturbances", []):
                if "agent" not in entry:
                    raise ConfigError("disturbance entry without 'agent'")
                dists.append((int(entry["agent"]), DisturbanceSpec.from_dict(entry)))
            ids = [a for a, _ in dists]
            if len(set(ids)) != len(ids):
                raise ConfigError("duplicate agent in disturbances")
            leader = LeaderTrajectory.from_dict(d.get("leader", {}))
            _check_keys("sim", d.get("sim", {}), SIM_KEYS)
            sim = dict(d.get("sim", {}))
            seed = int(d.get("seed", 0))
            synth = dict(d.get("synthesis", {}))
            cfg = cls(gains, topo, delay, tuple(dists), leader, sim, seed, synth)
            cfg.sim_config()
            if synth:
                cfg.synthesis_problem()
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        return cfg

    def to_dict(self):
        d = {
            "topology": dict(self.topology),
            "delay": self.delay.to_dict(),
            "disturbances": [{"agent": a, **spec.to_dict()} for a, spec in self.disturbances],
            "leader": self.leader.to_dict(),
            "sim": dict(self.sim),
            "seed": self.seed,
        }
        if self.gains is not None:
            d["gains"] = self.gains.to_dict()
        if self.synthesis:
            d["synthesis"] = dict(self.synthesis)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def require_gains(self):
        if self.gains is None:
            raise ConfigError("missing 'gains'")
        return self.gains

    def build_topology(self, n_circles=None):
        t = self.topology
        return build_topology(t["n_circles"] if n_circles is None else n_circles,
                              t["radius_step"], t["n_bar"])

    def sim_config(self, seed=None, **overrides) -> SimConfig:
        kw = dict(self.sim)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        kw["seed"] = self.seed if seed is None else seed
        return SimConfig(delay=self.delay, leader=self.leader,
                         disturbances=dict(self.disturbances), **kw)

    def synthesis_problem(self, seed=None) -> SynthesisProblem:
        d = dict(self.synthesis)
        d.setdefault("n_bar", self.topology["n_bar"])
        d.setdefault("tau_max", self.delay.tau_max)
        d["seed"] = self.seed if seed is None else seed
        return SynthesisProblem.from_dict(d)


def parse_config(text) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    return RunConfig.from_dict(raw)


def load_config(path):
    """Returns ``(config, raw_bytes)``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8: {exc}") from exc
    return parse_config(text), raw


def config_digest(raw: bytes):
    return hashlib.sha256(raw).hexdigest()
