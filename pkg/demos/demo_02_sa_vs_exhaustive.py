"""
Simulated annealing against brute force on a three-cell toy
==========================================================

With three cells there are only 11^3 = 1331 joint actions, so we can
enumerate them and see how close 2000 annealing steps get.
"""
import itertools
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import ORACLE_SA, oracle_instance  # noqa: E402

from cco.context import TaskContext
from cco.optimize import sa_optimize

task = oracle_instance(7)
ctx = TaskContext(task, 3, with_tensors=False)

t = time.perf_counter()
rewards = {d: ctx.outcome(ctx.action_from_classes([x + 5 for x in d])).global_reward
           for d in itertools.product(range(-5, 6), repeat=3)}
best = max(rewards, key=rewards.get)
print(f"exhaustive: best {rewards[best]:.3f} pp at {best} ({time.perf_counter() - t:.2f}s)")

vals = np.array(list(rewards.values()))
print(f"landscape: {np.mean(vals > 0):.1%} of actions improve, "
      f"median {np.median(vals):+.2f} pp")

###############################################################################
# 20 shots of 100 steps. ``trajectory`` holds the best reward after each shot.
t = time.perf_counter()
res = sa_optimize(task, ORACLE_SA, seed=0)
print(f"SA: {res.best_reward:.3f} pp with deltas {res.deltas} "
      f"({time.perf_counter() - t:.2f}s)")
print("best per shot:", [round(x, 2) for x in res.trajectory])
