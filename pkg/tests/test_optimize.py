import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cco.context import TaskContext
from cco.netsim import ActionVector
from cco.neural import NetConfig, PolicyNetwork
from cco.optimize import (AnnealSchedule, Baseline, Decision, LabeledExample, SAConfig,
                          SAResult, SelfPlayConfig, acceptance_probability, decide_cell,
                          decide_global, extract_labels, gradient_scales, predict_classes,
                          s2c_episode, s2c_train, sa_optimize, train_supervised,
                          within_accuracy)
from cco.reward import BestRecordStore
from cco.scenario import generate_network, generate_taskset, model_a_spec
from oracles import ORACLE_SA, exhaustive_optimum, oracle_instance, uniform_within_k

CFG = SelfPlayConfig()


# -- SA ---------------------------------------------------------------------------
def test_schedule_definition():
    s = AnnealSchedule(2.0, 0.9, 0.5)
    assert [s.at(n) for n in (0, 1, 2)] == [2.0, 1.8, pytest.approx(1.62)]
    assert s.at(100) == 0.5
    with pytest.raises(ValueError):
        AnnealSchedule(0.1, 0.9, 0.5)
    with pytest.raises(ValueError):
        AnnealSchedule(1.0, 1.5, 0.5)


def test_zero_temperature_is_hill_climbing():
    task = oracle_instance(3)
    cfg = SAConfig(n_shots=300, steps_per_shot=1, top_k=3,
                   schedule=AnnealSchedule(1e-9, 0.5, 1e-9), prune=False)
    res = sa_optimize(task, cfg, seed=1)
    assert all(b >= a for a, b in zip(res.current, res.current[1:]))
    assert all(b >= a for a, b in zip(res.trajectory, res.trajectory[1:]))


def test_zero_steps_empty_action():
    task = oracle_instance(0)
    res = sa_optimize(task, SAConfig(n_shots=1, steps_per_shot=0, top_k=3), seed=0)
    assert res.action == ActionVector() and res.best_reward == 0.0 and res.steps == 0


@pytest.mark.parametrize("seed", [1, 4, 9])
def test_sa_reaches_exhaustive_optimum(seed):
    task = oracle_instance(seed)
    opt = exhaustive_optimum(task)
    res = sa_optimize(task, ORACLE_SA, seed=seed)
    assert res.best_reward >= 0.95 * opt - 1e-9
    # the reported reward is the reward of the reported action
    ctx = TaskContext(task, 3, with_tensors=False)
    assert ctx.outcome(res.action).global_reward == pytest.approx(res.best_reward, abs=1e-9)


def test_sa_respects_limits_and_is_seeded():
    net = generate_network(model_a_spec(), 2)
    task = generate_taskset(net, 1, 5)[0]
    a = sa_optimize(task, SAConfig(n_shots=3, steps_per_shot=50), seed=3)
    b = sa_optimize(task, SAConfig(n_shots=3, steps_per_shot=50), seed=3)
    assert a.deltas.tolist() == b.deltas.tolist() and a.trajectory == b.trajectory
    assert len(a.trajectory) == 3 and len(a.cells) == 10
    assert np.all(np.abs(a.deltas) <= 5)
    t = np.array(task.initial_tilts)[a.cells] + a.deltas
    assert t.min() >= 0 and t.max() <= 15


def test_sa_prune_keeps_reward_and_shrinks():
    net = generate_network(model_a_spec(), 3)
    task = generate_taskset(net, 1, 8)[0]
    p = sa_optimize(task, SAConfig(n_shots=4, steps_per_shot=100, prune=True), seed=0)
    q = sa_optimize(task, SAConfig(n_shots=4, steps_per_shot=100, prune=False), seed=0)
    assert p.best_reward >= q.best_reward
    assert np.abs(p.deltas).sum() <= np.abs(q.deltas).sum()


# -- labels and SL -----------------------------------------------------------------
def _tiny_task(seed=0):
    net = generate_network(model_a_spec(cell_count_range=(30, 30), ue_count_range=(400, 400)), seed)
    return generate_taskset(net, 1, seed)[0]


def test_label_encoding():
    task = _tiny_task()
    ctx = TaskContext(task, 3, 32)
    zero = SAResult(ctx.cells, np.zeros(3, int), 0.0, [], 0)
    assert [e.label for e in extract_labels(task, zero, context=ctx)] == [5, 5, 5]
    ends = SAResult(ctx.cells, np.array([-5, 5, 2]), 0.0, [], 0)
    ex = extract_labels(task, ends, context=ctx)
    assert [e.label for e in ex] == [0, 10, 7]
    assert ex[0].tensor.shape == (32, 32, 22) and ex[0].cell == ctx.cells[0]
    with pytest.raises(ValueError):
        LabeledExample(ex[0].tensor, 11, "t", 0)


def test_label_distribution_non_degenerate():
    labels = []
    for i in range(10):
        net = generate_network(model_a_spec(), 100 + i)
        for task in generate_taskset(net, 10, 200 + i):
            ctx = TaskContext(task, 10, with_tensors=False)
            res = sa_optimize(task, SAConfig(), seed=i, context=ctx)
            labels += (res.deltas + 5).tolist()
    hist = np.bincount(labels, minlength=11) / len(labels)
    assert len(labels) == 1000
    assert hist.max() <= 0.8
    assert (hist > 0).sum() >= 5


def test_within_accuracy():
    y = np.arange(11)
    assert within_accuracy(y, y, 1) == within_accuracy(y, y, 2) == 1.0
    assert uniform_within_k(1) == pytest.approx(31 / 121)
    grid_p, grid_y = np.meshgrid(np.arange(11), np.arange(11))
    assert within_accuracy(grid_p.ravel(), grid_y.ravel(), 1) == pytest.approx(31 / 121)
    rng = np.random.default_rng(0)
    mc = within_accuracy(rng.integers(0, 11, 200_000), rng.integers(0, 11, 200_000), 1)
    assert mc == pytest.approx(0.256, abs=0.005)
    assert math.isnan(within_accuracy([], [], 1))


def test_train_supervised_learns_separable_labels():
    cfg = NetConfig(8, 4, 8, 1)
    rng = np.random.default_rng(0)
    ex = []
    for i in range(240):
        label = int(rng.choice([1, 9]))
        x = rng.normal(0, 0.3, (8, 8, 4))
        x[..., 2] += 0.8 if label == 9 else -0.8
        ex.append(LabeledExample(x.astype(np.float32), label, f"t{i // 4}", 0))
    net = PolicyNetwork(cfg, seed=0)
    res = train_supervised(ex[:200], net, 4, ex[200:], batch_size=16, lr=0.05)
    assert res.within_1deg >= 0.95
    assert len(res.history) == 4
    pred = predict_classes(net, np.stack([e.tensor for e in ex[200:]]))
    assert set(pred.tolist()) <= {0, 1, 2, 8, 9, 10}
    with pytest.raises(ValueError):
        train_supervised([], net, 1)


# -- acceptance laws ---------------------------------------------------------------
@pytest.mark.parametrize("mode", ["paper_literal", "flipped"])
@pytest.mark.parametrize("temp", [1e-6, 0.01, 1.0, 50.0])
def test_probability_half_at_zero(mode, temp):
    assert acceptance_probability(0.0, temp, mode) == 0.5


def test_literal_and_flipped_forms():
    x, t = 0.07, 0.2
    assert acceptance_probability(x, t, "paper_literal") == pytest.approx(1 / (1 + math.exp(x / t)))
    assert acceptance_probability(x, t, "flipped") == pytest.approx(1 / (1 + math.exp(-x / t)))
    with pytest.raises(ValueError):
        acceptance_probability(x, 0.0)


def test_threshold_branches_are_deterministic():
    rng = np.random.default_rng(0)
    eps = 1e-12
    for _ in range(200):
        assert decide_global(CFG.th_ge + eps, CFG, 1.0, rng) is Decision.ACCEPT_ENCOURAGE
        assert decide_global(CFG.th_gp, CFG, 1.0, rng) is Decision.REJECT_PENALIZE
        assert decide_cell(CFG.th_ce + eps, CFG, 1.0, rng) is Decision.ACCEPT_ENCOURAGE
        assert decide_cell(CFG.th_cp, CFG, 1.0, rng) is Decision.REJECT_PENALIZE
        assert decide_cell(CFG.th_cp - 3.0, CFG, 1.0, rng) is Decision.REJECT_PENALIZE


def test_threshold_branches_consume_no_randomness():
    rng = np.random.default_rng(5)
    decide_global(1.0, CFG, 1.0, rng)
    decide_cell(-1.0, CFG, 1.0, rng)
    assert rng.random() == np.random.default_rng(5).random()


def test_monte_carlo_matches_closed_form():
    rng = np.random.default_rng(1)
    for x, t in [(0.0, 1.0), (0.05, 0.1), (-0.08, 0.05), (0.1, 1.0), (-0.02, 0.01)]:
        p = acceptance_probability(x, t, CFG.acceptance_sign)
        hits = sum(decide_global(x, CFG, t, rng) is Decision.ACCEPT_ENCOURAGE for _ in range(20_000))
        assert hits / 20_000 == pytest.approx(p, abs=0.015)


def test_step_function_limit():
    t = 1e-6
    assert acceptance_probability(0.01, t, "paper_literal") == 0.0
    assert acceptance_probability(-0.01, t, "paper_literal") == 1.0
    assert acceptance_probability(0.01, t, "flipped") == 1.0
    assert acceptance_probability(-0.01, t, "flipped") == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        SelfPlayConfig(th_ge=-0.2)
    with pytest.raises(ValueError):
        SelfPlayConfig(acceptance_sign="reversed")
    with pytest.raises(ValueError):
        SelfPlayConfig(baseline_decay=1.0)
    assert SelfPlayConfig.from_dict(CFG.to_dict()) == CFG
    assert SAConfig.from_dict(SAConfig().to_dict()) == SAConfig()


# -- gradient scales ----------------------------------------------------------------
def test_scales_all_encouraged():
    acc = Decision.ACCEPT_ENCOURAGE
    s = gradient_scales(2.0, 0.5, acc, [acc] * 4, 4)
    assert s.tolist() == [1.5] * 4


def test_scales_global_reject_penalizes_all():
    s = gradient_scales(-1.0, 0.5, Decision.REJECT_PENALIZE, None, 3)
    assert s.tolist() == [-1.5] * 3


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.lists(st.booleans(), min_size=1, max_size=12),
       st.booleans())
def test_scale_sign_invariant(r, b, cells, g_accept):
    a, rj = Decision.ACCEPT_ENCOURAGE, Decision.REJECT_PENALIZE
    dec = [a if c else rj for c in cells]
    s = gradient_scales(r, b, a if g_accept else rj, dec if g_accept else None, len(cells))
    assert np.all(np.abs(s) == abs(r - b))
    if not g_accept:
        assert np.all(s <= 0)
    else:
        assert all((x >= 0) if d is a else (x <= 0) for x, d in zip(s, dec))


def test_baseline_ema():
    b = Baseline(0.0, 0.9)
    b.update(1.0)
    b.update(1.0)
    assert b.value == pytest.approx(0.19)


# -- S2C episodes ---------------------------------------------------------------------
def _net_forcing(cls, cfg=NetConfig()):
    net = PolicyNetwork(cfg, seed=0)
    net.params["head.b"][:] = -50.0
    net.params["head.b"][cls] = 50.0
    return net


def test_identity_episode_zero_reward_draw_decides():
    task = _tiny_task(1)
    net = _net_forcing(5)
    for seed in range(6):
        rng = np.random.default_rng(seed)
        log = s2c_episode(task, net, BestRecordStore(), CFG, _W(), 0, rng)
        assert log.r_new == 0.0 and log.delta_r_g == 0.0
        # replay: 10 categorical draws, then the P_g draw
        rr = np.random.default_rng(seed)
        for _ in log.actions:
            rr.choice(11, p=np.eye(11)[5])
        expected = "accept" if rr.random() < 0.5 else "reject"
        assert log.global_decision == expected
        assert log.actions == [5] * len(log.cells)


def _W():
    from cco.reward import RewardWeights
    return RewardWeights()


def _replay_scales(log, cfg):
    mag = abs(log.r_new - log.baseline)
    if log.delta_r_g > cfg.th_ge:
        assert log.global_decision == "accept"
    if log.delta_r_g <= cfg.th_gp:
        assert log.global_decision == "reject"
    if log.global_decision == "reject":
        assert log.cell_decisions == []
        return [-mag] * len(log.actions)
    out = []
    for r, d in zip(log.cell_rewards, log.cell_decisions):
        if r > cfg.th_ce:
            assert d == "accept"
        if r <= cfg.th_cp:
            assert d == "reject"
        out.append(mag if d == "accept" else -mag)
    return out


def test_episode_scales_replay():
    task = oracle_instance(4)
    net = PolicyNetwork(NetConfig(), seed=0)  # uniform sampling
    store = BestRecordStore()
    base = Baseline(0.0, 0.99)
    rng = np.random.default_rng(0)
    ctx = TaskContext(task, 3)
    logs = [s2c_episode(task, net, store, CFG, _W(), ep, rng, base, context=ctx)
            for ep in range(40)]
    assert {lg.global_decision for lg in logs} == {"accept", "reject"}
    for lg in logs:
        assert lg.scales == pytest.approx(_replay_scales(lg, CFG))
        assert len(lg.cells) == 3
    bests = [lg.r_best for lg in logs]
    assert all(b >= a for a, b in zip(bests, bests[1:]))
    assert store.best(task.task_id) == max(lg.r_new for lg in logs)


def test_encouraged_when_beating_record():
    from itertools import product
    task = oracle_instance(9)
    ctx = TaskContext(task, 3)
    store = BestRecordStore()
    store.update(task.task_id, 1.0, ActionVector())
    # a joint action beating the record by more than th_ge with every cell reward > th_ce
    for d in product(range(11), repeat=3):
        out = ctx.outcome(ctx.action_from_classes(d))
        if (out.global_reward - store.best(task.task_id) > CFG.th_ge
                and np.all(out.cell_rewards > CFG.th_ce)):
            break
    else:
        pytest.fail("fixture has no all-improving action")
    rng = np.random.default_rng(0)
    g = decide_global(out.global_reward - store.best(task.task_id), CFG, 1.0, rng)
    cells = [decide_cell(float(r), CFG, 1.0, rng) for r in out.cell_rewards]
    acc = Decision.ACCEPT_ENCOURAGE
    assert g is acc and all(c is acc for c in cells)
    assert gradient_scales(out.global_reward, 0.3, g, cells, 3).tolist() == \
        [abs(out.global_reward - 0.3)] * 3


def test_s2c_budget_zero_leaves_net():
    net = PolicyNetwork(NetConfig(), seed=0, zero_head=False)
    before = {k: v.copy() for k, v in net.params.items()}
    out, log, store = s2c_train([_tiny_task()], net, CFG, 0)
    assert out is net and not log.episodes and len(store) == 0
    assert all((net.params[k] == before[k]).all() for k in before)


def test_s2c_train_logs_and_temperatures():
    net = generate_network(model_a_spec(cell_count_range=(30, 30), ue_count_range=(400, 400)), 0)
    tasks = generate_taskset(net, 3, 1)
    cfg = SelfPlayConfig(batch_size=16, global_schedule=AnnealSchedule(1.0, 0.9, 0.3),
                         cell_schedule=AnnealSchedule(2.0, 0.8, 0.1))
    pnet = PolicyNetwork(NetConfig(), seed=0)
    p0 = pnet.params["head.w"].copy()
    _, log, store = s2c_train(tasks, pnet, cfg, 7, seed=2)
    assert [e.episode for e in log.episodes] == list(range(7))
    for e in log.episodes:
        assert e.t_g == max(0.9 ** e.episode, 0.3)
        assert e.t_c == max(2.0 * 0.8 ** e.episode, 0.1)
        assert e.scales == pytest.approx(_replay_scales(e, cfg))
    # every task is visited once per pass
    assert sorted(e.task_id for e in log.episodes[:3]) == sorted(t.task_id for t in tasks)
    assert len(store) == 3
    assert not np.array_equal(p0, pnet.params["head.w"])
    import json
    assert json.loads(log.episodes[0].to_json())["episode"] == 0


def test_s2c_train_is_deterministic():
    net = generate_network(model_a_spec(cell_count_range=(30, 30), ue_count_range=(400, 400)), 0)
    tasks = generate_taskset(net, 2, 1)
    runs = []
    for _ in range(2):
        pnet = PolicyNetwork(NetConfig(), seed=0)
        s2c_train(tasks, pnet, SelfPlayConfig(batch_size=10), 4, seed=3)
        runs.append(b"".join(pnet.params[k].tobytes() for k in pnet.param_names()))
    assert runs[0] == runs[1]
