"""
A few hundred self-play episodes on a small network set
========================================================

A reduced net trains on three networks, then acts once per held-out
task. We compare it with the SA multi-shot baseline and a no-op.
"""
import time

from cco.evaluate import constant_policy, evaluate_one_shot, evaluate_sa
from cco.neural import NetConfig, PolicyNetwork
from cco.optimize import SAConfig, SelfPlayConfig, s2c_train
from cco.scenario import SuiteConfig, generate_suite, model_a_spec, model_b_spec

spec = model_a_spec(cell_count_range=(30, 36), ue_count_range=(500, 600))
suite = generate_suite(SuiteConfig(n_networks=3, train_states=20, val_states=0, test_states=5,
                                   transfer_networks=0, source=spec, target=model_b_spec()), 1)
print({k: len(v) for k, v in suite.items()})

net = PolicyNetwork(NetConfig(width=16, blocks=1), seed=0)
ctx = {}
t = time.perf_counter()
net, log, store = s2c_train(suite["train"], net, SelfPlayConfig(), 300, seed=0)
print(f"300 episodes in {time.perf_counter() - t:.0f}s; "
      f"records kept for {len(store)} tasks")

accepted = sum(e.global_decision == "accept" for e in log.episodes)
print(f"global decisions: {accepted} accept / {len(log.episodes) - accepted} reject")

###############################################################################
# One shot per task for the net, ten shots for SA.
for rep in (evaluate_one_shot(constant_policy(5), suite["test"], name="no-op", contexts=ctx),
            evaluate_one_shot(net, suite["test"], name="self-play", contexts=ctx),
            evaluate_sa(suite["test"], SAConfig(), seed=0)):
    print(f"{rep.policy:12s} Avg {rep.avg_global_reward:+.3f} pp  "
          f"Ratio {rep.ratio_positive_reward:.2f}")
