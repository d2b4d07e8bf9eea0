"""Acceptance criteria, one test each, with one PASS/FAIL line per criterion.

Run directly (``python tests/test_acceptance.py``) or through pytest; the
lines are repeated in the terminal summary.
"""

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from muxscal.certifier import certify
from muxscal.config import load_config
from muxscal.halanay import ContractionMargins, convergence_rate, halanay_envelope
from muxscal.protocol import DisturbanceSpec, GainSet, build_topology
from muxscal.simulator import formation_sweep, iss_bound_trace, run
from muxscal.synthesis import SynthesisProblem, grid_sweep, lmi_feasible_batch, lmi_slacks
from oracles import lmi_samples, set_b_rounding_representative, sup_dde_euler

ROOT = Path(__file__).resolve().parents[1]
SET_A = GainSet(1.4155, 1.5103, 0.4803, 0.642, 0.872, 0.425, 0.1, -0.6, -1.6)
SET_B = GainSet(1.2674, 0.6312, 0.133, 0.325, 0.162, 0.06, 0.1, -1.1, -2.6)
N_BAR, TAU = 3, 0.33
PERTURBED = (1, 3)


def scenario():
    """Two circles, delayed network, disturbances on agents 1 and 3, 60 s at h = 0.01."""
    cfg, _ = load_config(ROOT / "configs" / "set_b_two_circles.json")
    return cfg.sim_config(), cfg.build_topology()


def without_residual(sim):
    return sim.with_(disturbances={a: DisturbanceSpec(d.poly_coeffs)
                                   for a, d in sim.disturbances.items()})


def set_b_constraints(g: GainSet):
    gb = g.g_bar
    return g.k0 >= 2 * g.k1 and g.k0 >= 2 * g.k2 and gb[0] >= 2 * gb[1] and gb[0] >= 2 * gb[2]


def representative_b():
    kt = set_b_rounding_representative(SET_B.k, SET_B.k_tau, SET_B.k_psi, SET_B.alpha, N_BAR)
    return GainSet(SET_B.k0, SET_B.k1, SET_B.k2, *kt, SET_B.k_psi, *SET_B.alpha)


def soundness(gains, sim, topo):
    """``(violations, samples, metrics)`` of the deviation bound along a run."""
    cert = certify(gains, N_BAR, sim.delay.tau_max)
    m = run(sim, gains, topo)
    if not cert.feasible:
        return None, len(m.times), m
    bound = iss_bound_trace(cert, sim, m)
    return int(np.sum(m.deviation.max(axis=1) > bound)), len(m.times), m


@pytest.fixture(scope="module")
def set_b_run():
    sim, topo = scenario()
    t0 = time.perf_counter()
    m = run(sim, SET_B, topo)
    return sim, topo, m, time.perf_counter() - t0


def test_c1_set_a_feasible(acceptance):
    t0 = time.perf_counter()
    cert = certify(SET_A, N_BAR, TAU)
    dt = time.perf_counter() - t0
    ok = cert.feasible and cert.gap > 1e-6 and dt < 1.0
    acceptance("1 set A feasible", ok, f"gap={cert.gap:.4g}, {dt * 1e3:.1f} ms")
    assert ok


def test_c2_set_b_feasible_with_constraints(acceptance):
    t0 = time.perf_counter()
    cert = certify(SET_B, N_BAR, TAU)
    dt = time.perf_counter() - t0
    cons = set_b_constraints(SET_B)
    ok = cert.feasible and cons and dt < 1.0
    acceptance("2 set B feasible + constraints", ok,
               f"gap={cert.gap:.4g}, constraints={'ok' if cons else 'violated'}, "
               f"{dt * 1e3:.1f} ms")
    assert ok


def test_c2_supplement_rounding_representative(acceptance):
    g = representative_b()
    cert = certify(g, N_BAR, TAU)
    assert np.all(np.abs(g.k_tau - SET_B.k_tau) <= np.array([5e-4, 5e-4, 5e-3]) + 1e-15)
    ok = cert.feasible and set_b_constraints(g)
    acceptance("2 (supplement) set B digits, rounding-box point", ok,
               f"k_tau={np.round(g.k_tau, 6).tolist()}, gap={cert.gap:.4g}")
    assert ok


def test_c3_rate_properties(acceptance):
    rng = np.random.default_rng(3)
    taus = np.round(np.arange(0, 1.05, 0.1), 10)
    zero_err, worst_res, monotone = 0.0, 0.0, True
    for _ in range(50):
        sb = rng.uniform(0.05, 5.0)
        su = rng.uniform(0.01, 0.99) * sb
        rates = []
        for tau in taus:
            m = ContractionMargins(sb, su, float(tau))
            lam = convergence_rate(m)
            worst_res = max(worst_res, abs(lam - sb + su * math.exp(lam * tau)))
            rates.append(lam)
        zero_err = max(zero_err, abs(rates[0] - (sb - su)))
        monotone &= bool(np.all(np.diff(rates) < 0))
    ok = zero_err <= 1e-10 and monotone and worst_res < 1e-12
    acceptance("3 convergence rate", ok,
               f"|rate(0)-gap|={zero_err:.2g}, residual={worst_res:.2g}, decreasing={monotone}")
    assert ok


def test_c4_halanay_soundness(acceptance):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst = -np.inf
    for _ in range(100):
        sb = rng.uniform(0.2, 3.0)
        su = rng.uniform(0.0, 0.95) * sb
        tau = rng.uniform(0.0, 1.0)
        c = rng.uniform(0.0, 1.0)
        u0 = rng.uniform(0.0, 2.0)
        t, u = sup_dde_euler(sb, su, tau, c, u0, 8.0, 1e-3)
        env = halanay_envelope(u0, c, ContractionMargins(sb, su, tau), t)
        worst = max(worst, float(np.max((u - env) / env)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 30.0
    acceptance("4 Halanay envelope", ok, f"max relative excess={worst:.3g}, {dt:.1f} s")
    assert ok


def test_c5_polynomial_rejection(acceptance, set_b_run):
    sim, topo, m, dt_a = set_b_run
    z = np.linalg.norm(m.final_zeta[[a - 1 for a in PERTURBED]], axis=-1)
    t0 = time.perf_counter()
    m0 = run(without_residual(sim), SET_B, topo)
    dt_b = time.perf_counter() - t0
    ok_a = float(z.max()) < 1e-3
    ok_b = m0.terminal_max() < 1e-4
    ok = ok_a and ok_b and max(dt_a, dt_b) < 10.0
    acceptance("5 polynomial rejection", ok,
               f"(a) terminal zeta={z.max():.4g}, (b) w=0 terminal dev={m0.terminal_max():.3g} m, "
               f"{dt_a:.1f}+{dt_b:.1f} s")
    assert ok


def test_c6_certificate_soundness(acceptance, set_b_run):
    sim, _, m, _ = set_b_run
    cert = certify(SET_B, N_BAR, sim.delay.tau_max)
    if not cert.feasible:
        acceptance("6 bound holds along the criterion-5 run", False,
                   f"no bound: certificate infeasible (gap={cert.gap:.4g})")
        pytest.fail("set B is not certified, so there is no bound to check")
    bound = iss_bound_trace(cert, sim, m)
    viol = int(np.sum(m.deviation.max(axis=1) > bound))
    acceptance("6 bound holds along the criterion-5 run", viol == 0,
               f"{viol} violations in {len(m.times)} samples")
    assert viol == 0


def test_c6_supplement_rounding_representative(acceptance):
    sim, topo = scenario()
    viol, n, m = soundness(representative_b(), sim, topo)
    ok = viol == 0
    acceptance("6 (supplement) bound with rounding-box set B", ok,
               f"{viol} violations in {n} samples, max dev={m.global_max():.4g} m")
    assert ok


def test_c7_non_amplification(acceptance):
    sim, _ = scenario()
    t0 = time.perf_counter()
    res = formation_sweep(sim, SET_A, range(1, 11))
    dt = time.perf_counter() - t0
    g = dict(zip(res.n_circles.tolist(), res.global_max.tolist()))
    growth = g[10] / g[2] - 1.0
    agg = res.aggregate
    shape = all(agg[c + 1] <= 1.1 * agg[c] for c in range(2, 10))
    ok = growth < 0.05 and shape and dt < 120.0
    acceptance("7 non-amplification sweep", ok,
               f"growth n=2..10 {growth * 100:.3g}%, per-circle decay={shape}, {dt:.0f} s")
    assert ok


def test_c8_lmi_forms_agree(acceptance):
    k, g, sb, su, al = lmi_samples(10_000, 8)
    slack = lmi_slacks(k, g, sb, su, al, N_BAR)
    away = np.all(np.abs(slack) > 1e-7, axis=1)
    norm = lmi_feasible_batch(k, g, sb, su, al, N_BAR, method="norm")
    schur = lmi_feasible_batch(k, g, sb, su, al, N_BAR, method="schur")
    mismatch = int(np.sum((norm != schur) & away))
    ok = mismatch == 0
    acceptance("8 Schur and norm LMI tests agree", ok,
               f"{mismatch} mismatches in {int(away.sum())} samples "
               f"({int(norm[away].sum())} feasible)")
    assert ok


def test_c9_synthesis(acceptance):
    problem = SynthesisProblem(seed=0)
    first = grid_sweep(problem)
    second = grid_sweep(problem)
    same = json.dumps(first.to_dict()) == json.dumps(second.to_dict())
    feasible = first.status == "ok" and first.certificate.feasible
    viol = None
    if feasible:
        sim, topo = scenario()
        viol, _, _ = soundness(first.best_gains, sim, topo)
    ok = feasible and same and viol == 0
    acceptance("9 synthesis feasible, sound, reproducible", ok,
               f"status={first.status}, cost={first.best_cost:.5g}, "
               f"violations={viol}, identical={same}")
    assert ok


def test_c10_step_convergence(acceptance):
    sim, topo = scenario()
    finals = [run(sim.with_(step=h), SET_B, topo).final_error for h in (0.02, 0.01, 0.005)]
    d1 = np.abs(finals[0] - finals[1]).max()
    d2 = np.abs(finals[1] - finals[2]).max()
    order = math.log2(d1 / d2)
    ok = order >= 2.0
    acceptance("10 step-size convergence order", ok,
               f"order={order:.2f} (differences {d1:.2g}, {d2:.2g})")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
