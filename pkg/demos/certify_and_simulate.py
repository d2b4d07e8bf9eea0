"""Certify two reference gain sets, then check the bound against a simulation.

Run with ``python3 demos/certify_and_simulate.py``; takes a few seconds.
"""

import numpy as np

from muxscal.certifier import certify
from muxscal.protocol import DampedSinusoid, DisturbanceSpec, GainSet, build_topology
from muxscal.simulator import LeaderTrajectory, SimConfig, iss_bound_trace, run

SET_A = GainSet(1.4155, 1.5103, 0.4803, 0.642, 0.872, 0.425, 0.1, -0.6, -1.6)
SET_B = GainSet(1.2674, 0.6312, 0.133, 0.325, 0.162, 0.06, 0.1, -1.1, -2.6)

print("Certificates for three neighbours and a 0.33 s delay")
for name, g in (("A", SET_A), ("B", SET_B)):
    c = certify(g, 3, 0.33)
    print(f"  set {name}: sigma_bar={c.sigma_bar:.6f} sigma_under={c.sigma_under:.6f} "
          f"gap={c.gap:+.3e} feasible={c.feasible}")
print("Set B misses by about 1e-3, the size of a change in the last digits of its gains.\n")

# a constant push on agent 1, a ramp on agent 3 and a decaying wobble on both
w = DampedSinusoid([0.4, 0.4], 0.5, 0.1, 0.0)
dist = {1: DisturbanceSpec([[0.04, 0.04]], (w,)),
        3: DisturbanceSpec([[0.0, 0.0], [-0.05, -0.05]], (w,))}
cfg = SimConfig(duration=60.0, disturbances=dist, init_mode="perturbed",
                leader=LeaderTrajectory("rounded_rectangle", {"speed": 0.05}))
topo = build_topology(2)
m = run(cfg, SET_A, topo)
bound = iss_bound_trace(certify(SET_A, 3, 0.33), cfg, m)
dev = m.deviation.max(axis=1)

print(f"Set A on {topo.n_agents} robots, perturbed start")
print("     t [s]   max deviation [m]   bound [m]")
for t in (0, 5, 10, 20, 40, 60):
    k = int(np.searchsorted(m.times, t))
    print(f"  {m.times[k]:8.1f}   {dev[k]:17.5f}   {bound[k]:9.4f}")
print(f"violations of the bound: {int(np.sum(dev > bound))} of {len(dev)} samples")
cert = certify(SET_A, 3, 0.33)
print(f"The bound is sound but loose: the residual gain is kappa/gap = {cert.gain_dc:.3g}")
print(f"and the transient decays at only {cert.rate:.2e} 1/s, both set by the tiny gap.")

z = np.linalg.norm(m.final_zeta[[0, 2]], axis=-1).max()
print(f"\nThe integrators absorb the constant and the ramp: terminal zeta norm {z:.2e}.")
print("What is left is the wobble, which decays like exp(-0.1 t).")
