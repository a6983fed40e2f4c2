"""
A synthetic radio network and what a tilt change does to it
============================================================

We generate one randomized network, measure every UE, and then push a
single cell's antenna up and down to see coverage and quality move.
"""
import numpy as np

from cco.netsim import ActionVector, apply_action, compute_measurements
from cco.reward import global_reward
from cco.scenario import generate_network, model_a_spec

net = generate_network(model_a_spec(), seed=3)
print(f"{net.n_cells} cells, {net.n_ues} UEs, propagation {net.propagation.variant}")

meas = compute_measurements(net)
rsrp = meas.serving_rsrp
print(f"serving RSRP: median {np.median(rsrp):.1f} dBm, "
      f"{np.mean(rsrp >= -105):.1%} above -105 dBm")
print(f"SINR: median {np.median(meas.sinr):.1f} dB, {np.mean(meas.sinr >= -3):.1%} above -3 dB")

# Each UE is served by its strongest cell; load is very uneven.
load = np.bincount(meas.serving, minlength=net.n_cells)
print("UEs per cell (first 10):", load[:10].tolist())

###############################################################################
# Sweep the busiest cell through all eleven tilt deltas (-5..+5 degrees).
# A positive delta is a downtilt. The reward is in percent points of UEs.
busy = int(np.argmax(load))
for d in range(-5, 6):
    after = compute_measurements(apply_action(net, ActionVector(((busy, d),))))
    r = global_reward(meas, after)
    print(f"cell {busy} delta {d:+d}: global {r.global_reward:+.3f} pp "
          f"(coverage {r.coverage_delta:+.3f}, quality {r.quality_delta:+.3f})")
