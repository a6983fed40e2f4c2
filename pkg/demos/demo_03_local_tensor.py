"""
From a network graph to a fixed-size local tensor
=================================================

Every cell the policy acts on is summarized as a 32x32xM tensor built
from itself and its 31 highest-affinity neighbours.
"""
import numpy as np

from cco.graphdistill import ChannelRegistry, build_graph, distill, select_fov, select_top_k
from cco.netsim import compute_measurements
from cco.scenario import generate_network, model_a_spec

net = generate_network(model_a_spec(), seed=11)
meas = compute_measurements(net)
graph = build_graph(net, meas)

# the policy only touches the K least healthy cells
targets = select_top_k(net, meas, 10)
print("top-10 cells by (low) health:", targets)

center = targets[0]
fov = select_fov(graph, center, 31)
print(f"FOV of cell {center}: {fov.members[:8]} ...")

t = distill(graph, fov, ChannelRegistry())
print("tensor shape:", t.data.shape)
for name, ch in zip(ChannelRegistry().names, np.moveaxis(t.data, -1, 0)):
    print(f"  {name:16s} min {ch.min():+.3f} max {ch.max():+.3f}")
