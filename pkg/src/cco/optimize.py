"""CCO optimizers: SA multi-shot search, supervised policy training, and the
self-play competitive/cooperative (S2C) policy-gradient loop.

Rewards are in percent points throughout. S2C runs one-shot episodes: every
selected cell samples a tilt delta from the shared policy, all deltas are
applied together once, and each action then receives a signed gradient scale
from a two-level (global, then per-cell) annealed acceptance test.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .context import FastEvaluator, TaskContext
from .graphdistill import ChannelRegistry
from .netsim import DELTA_RANGE, ActionVector
from .neural import (GradientAccumulator, PolicyNetwork, SGD, accumulate_batch,
                     apply_update, forward)
from .reward import BestRecordStore, RewardWeights, update_best_record
from .scenario import CCOTask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnealSchedule:
    t0: float = 1.0
    gamma: float = 0.999
    t_min: float = 0.01

    def __post_init__(self):
        if not self.t0 >= self.t_min > 0:
            raise ValueError("need t0 >= t_min > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    def at(self, n: int) -> float:
        return max(self.t0 * self.gamma ** n, self.t_min)


@dataclass(frozen=True)
class SAConfig:
    n_shots: int = 10
    steps_per_shot: int = 100
    schedule: AnnealSchedule = AnnealSchedule(0.5, 0.99, 0.01)
    max_net_delta: int = 5
    top_k: int = 10
    prune: bool = True

    def __post_init__(self):
        if self.n_shots < 1:
            raise ValueError("n_shots must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "schedule" in doc:
            doc["schedule"] = AnnealSchedule(**doc["schedule"])
        return cls(**doc)


@dataclass
class SAResult:
    cells: list[int]
    deltas: np.ndarray
    best_reward: float
    trajectory: list[float]  # best reward at the end of each shot
    steps: int
    current: list[float] = field(default_factory=list)  # current reward at each shot end

    @property
    def action(self) -> ActionVector:
        return ActionVector(tuple((c, int(d)) for c, d in zip(self.cells, self.deltas) if d))


def sa_optimize(task: CCOTask, cfg: SAConfig = SAConfig(), w: RewardWeights = RewardWeights(),
                seed: int = 0, cells: Sequence[int] | None = None,
                context: TaskContext | None = None) -> SAResult:
    """Metropolis search over per-cell tilt deltas of the top-K cells.

    Each step moves one cell by +/-1 degree, keeping the net delta within
    ``max_net_delta`` and the tilt inside its limits. The best visited state
    wins; among equally good states the one with the smaller total adjustment
    is kept. With ``cfg.prune`` the winner is then shrunk toward zero one
    degree at a time (largest adjustment first) while the reward does not
    drop, so cells whose tilt does not matter end at 0.
    """
    rng = np.random.default_rng(seed)
    if context is None:
        context = TaskContext(task, cfg.top_k, w=w, with_tensors=False)
    if cells is None:
        cells = context.cells
    cells = list(cells)
    lo, hi = context.state.tilt_limits
    ev = FastEvaluator(context.radio, context.tilts0, w)
    deltas = np.zeros(len(cells), dtype=int)
    cur = 0.0
    best, best_deltas, best_l1 = 0.0, deltas.copy(), 0
    traj, current = [], []
    total = cfg.n_shots * cfg.steps_per_shot
    m = cfg.max_net_delta
    for step in range(total):
        temp = cfg.schedule.at(step)
        j = int(rng.integers(len(cells)))
        sign = 1 if rng.random() < 0.5 else -1
        c = cells[j]
        for s in (sign, -sign):
            nd = deltas[j] + s
            tilt = context.tilts0[c] + nd
            if -m <= nd <= m and lo <= tilt <= hi:
                break
        else:
            continue
        r, row, lin_row = ev.try_cell(c, tilt)
        d_r = r - cur
        u = rng.random()
        if d_r > 0 or u < np.exp(d_r / temp):
            ev.commit(c, tilt, row, lin_row)
            deltas[j] = nd
            cur = r
            l1 = int(np.abs(deltas).sum())
            if cur > best or (cur == best and l1 < best_l1):
                best, best_deltas, best_l1 = cur, deltas.copy(), l1
        if (step + 1) % cfg.steps_per_shot == 0:
            traj.append(best)
            current.append(cur)
    if total == 0:
        traj, current = [0.0] * cfg.n_shots, [0.0] * cfg.n_shots
    if cfg.prune and best_l1:
        best_deltas, best = _prune(ev, context.tilts0, cells, best_deltas, best)
    return SAResult(cells, best_deltas, float(best), traj, total, current)


def _prune(ev: FastEvaluator, tilts0, cells, deltas, reward):
    def score(d):
        t = tilts0.copy()
        t[cells] += d
        return ev.reward_of(t)

    deltas = deltas.copy()
    changed = True
    while changed:
        changed = False
        for j in np.argsort(-np.abs(deltas), kind="stable"):
            if deltas[j] == 0:
                continue
            trial = deltas.copy()
            trial[j] -= np.sign(trial[j])
            r = score(trial)
            if r >= reward:
                deltas, reward, changed = trial, r, True
    return deltas, reward


# -- supervised learning -----------------------------------------------------
@dataclass
class LabeledExample:
    tensor: np.ndarray
    label: int
    task_id: str
    cell: int

    def __post_init__(self):
        if not 0 <= self.label <= 10:
            raise ValueError(f"label {self.label} outside 0..10")


def extract_labels(task: CCOTask, result: SAResult, k_fov: int = 32,
                   registry: ChannelRegistry = ChannelRegistry(),
                   w: RewardWeights = RewardWeights(),
                   context: TaskContext | None = None) -> list[LabeledExample]:
    """One example per optimized cell: tensor at the initial state, label delta+5."""
    if context is None or context.tensors is None:
        context = TaskContext(task, len(result.cells), k_fov, registry, w)
    pos = {c: i for i, c in enumerate(context.cells)}
    out = []
    for c, d in zip(result.cells, result.deltas):
        out.append(LabeledExample(context.tensors[pos[c]], int(d) + 5, task.task_id, int(c)))
    return out


def within_accuracy(pred, labels, k: int) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.abs(pred - labels) <= k))


def predict_classes(net: PolicyNetwork, x, batch_size: int = 64) -> np.ndarray:
    x = np.asarray(x)
    out = []
    for i in range(0, len(x), batch_size):
        out.append(np.argmax(net.forward_batch(x[i:i + batch_size])[0], axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


@dataclass
class SLResult:
    within_1deg: float
    within_2deg: float
    history: list[dict] = field(default_factory=list)


def train_supervised(examples: Sequence[LabeledExample], net: PolicyNetwork, epochs: int,
                     holdout: Sequence[LabeledExample] = (), batch_size: int = 32,
                     lr: float = 0.02, momentum: float = 0.9, seed: int = 0,
                     progress: Callable[[dict], None] | None = None) -> SLResult:
    """Cross-entropy + L2 training; reports hold-out within-1/within-2 accuracy.

    Maximizing log-likelihood of the label is the scale=+1 case of the
    policy-gradient accumulator, so the same engine serves both.
    """
    if not examples:
        raise ValueError("need at least one training example")
    x = np.stack([e.tensor for e in examples]).astype(net.dtype, copy=False)
    y = np.array([e.label for e in examples])
    hx = np.stack([e.tensor for e in holdout]) if len(holdout) else None
    hy = np.array([e.label for e in holdout])
    return train_supervised_arrays(x, y, net, epochs, hx, hy, batch_size, lr, momentum,
                                   seed, progress)


def train_supervised_arrays(x: np.ndarray, y: np.ndarray, net: PolicyNetwork, epochs: int,
                            hx: np.ndarray | None = None, hy: np.ndarray | None = None,
                            batch_size: int = 32, lr: float = 0.02, momentum: float = 0.9,
                            seed: int = 0,
                            progress: Callable[[dict], None] | None = None) -> SLResult:
    """:func:`train_supervised` on pre-stacked arrays; ``x`` is used without copying."""
    if len(x) == 0:
        raise ValueError("need at least one training example")
    y = np.asarray(y)
    if len(y) != len(x) or y.min() < 0 or y.max() > 10:
        raise ValueError("labels must be one class in 0..10 per example")
    rng = np.random.default_rng(seed)
    steps_per_epoch = int(np.ceil(len(x) / batch_size))
    opt = SGD(lr, momentum, total_steps=max(epochs * steps_per_epoch, 1))
    acc = GradientAccumulator(net)
    history = []
    if hx is not None and len(hx) == 0:
        hx = None
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        for b in range(steps_per_epoch):
            idx = np.sort(order[b * batch_size:(b + 1) * batch_size])
            if len(idx) < 2:
                continue
            accumulate_batch(net, x[idx], y[idx], np.ones(len(idx)), acc)
            apply_update(net, acc, opt)
        row = {"epoch": epoch + 1}
        if hx is not None:
            pred = predict_classes(net, hx)
            row["within_1deg"] = within_accuracy(pred, hy, 1)
            row["within_2deg"] = within_accuracy(pred, hy, 2)
        history.append(row)
        if progress:
            progress(row)
    if hx is None:
        return SLResult(float("nan"), float("nan"), history)
    pred = predict_classes(net, hx)
    return SLResult(within_accuracy(pred, hy, 1), within_accuracy(pred, hy, 2), history)


# -- self-play acceptance ----------------------------------------------------
class Decision(enum.Enum):
    ACCEPT_ENCOURAGE = "accept"
    REJECT_PENALIZE = "reject"


@dataclass(frozen=True)
class SelfPlayConfig:
    th_ge: float = 0.1
    th_gp: float = -0.1
    th_ce: float = 0.05
    th_cp: float = -0.05
    global_schedule: AnnealSchedule = AnnealSchedule(1.0, 0.999, 0.01)
    cell_schedule: AnnealSchedule = AnnealSchedule(1.0, 0.999, 0.01)
    acceptance_sign: str = "paper_literal"
    baseline_decay: float = 0.99
    top_k: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.9

    def __post_init__(self):
        if not self.th_gp < self.th_ge:
            raise ValueError("need th_gp < th_ge")
        if not self.th_cp < self.th_ce:
            raise ValueError("need th_cp < th_ce")
        if self.acceptance_sign not in ("paper_literal", "flipped"):
            raise ValueError(f"unknown acceptance_sign {self.acceptance_sign!r}")
        if not 0 < self.baseline_decay < 1:
            raise ValueError("baseline_decay must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        for key in ("global_schedule", "cell_schedule"):
            if key in doc:
                doc[key] = AnnealSchedule(**doc[key])
        return cls(**doc)


def acceptance_probability(x: float, temperature: float, sign_mode: str = "paper_literal") -> float:
    """1/(1+exp(x/T)) as written, or 1/(1+exp(-x/T)) in flipped mode."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    z = x / temperature
    return float(expit(-z) if sign_mode == "paper_literal" else expit(z))


def _decide(x, th_accept, th_reject, temperature, sign_mode, rng):
    if x > th_accept:
        return Decision.ACCEPT_ENCOURAGE
    if x <= th_reject:
        return Decision.REJECT_PENALIZE
    p = acceptance_probability(x, temperature, sign_mode)
    return Decision.ACCEPT_ENCOURAGE if rng.random() < p else Decision.REJECT_PENALIZE


def decide_global(delta_r_g: float, cfg: SelfPlayConfig, temperature: float,
                  rng: np.random.Generator) -> Decision:
    return _decide(delta_r_g, cfg.th_ge, cfg.th_gp, temperature, cfg.acceptance_sign, rng)


def decide_cell(r_ci: float, cfg: SelfPlayConfig, temperature: float,
                rng: np.random.Generator) -> Decision:
    return _decide(r_ci, cfg.th_ce, cfg.th_cp, temperature, cfg.acceptance_sign, rng)


def gradient_scales(r_new: float, baseline: float, global_decision: Decision,
                    cell_decisions: Sequence[Decision] | None, k: int) -> np.ndarray:
    """Signed per-action scales: +|R-B| on acceptance, -|R-B| on rejection."""
    mag = abs(r_new - baseline)
    if global_decision is Decision.REJECT_PENALIZE:
        return np.full(k, -mag)
    return np.array([mag if d is Decision.ACCEPT_ENCOURAGE else -mag for d in cell_decisions])


@dataclass
class Baseline:
    value: float = 0.0
    decay: float = 0.99

    def update(self, r: float) -> float:
        self.value = self.decay * self.value + (1.0 - self.decay) * r
        return self.value


@dataclass
class EpisodeLog:
    episode: int
    task_id: str
    r_new: float
    r_best: float
    delta_r_g: float
    global_decision: str
    cell_rewards: list[float]
    cell_decisions: list[str]
    scales: list[float]
    actions: list[int]
    cells: list[int]
    t_g: float
    t_c: float
    baseline: float
    improved_record: bool
    tensors: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "tensors"}
        return json.dumps(d, sort_keys=True)


def s2c_episode(task: CCOTask, net: PolicyNetwork, store: BestRecordStore,
                cfg: SelfPlayConfig, w: RewardWeights, episode: int,
                rng: np.random.Generator, baseline: Baseline | None = None,
                acc: GradientAccumulator | None = None,
                context: TaskContext | None = None) -> EpisodeLog:
    """One one-shot S2C episode.

    With ``acc`` given, the scaled log-prob gradients of this episode are
    accumulated into it as one batch; otherwise the caller batches them using
    ``log.tensors``, ``log.actions`` and ``log.scales``.
    """
    if baseline is None:
        baseline = Baseline(0.0, cfg.baseline_decay)
    if context is None:
        context = TaskContext(task, cfg.top_k, net.cfg.k_fov, w=w)
    t_g = cfg.global_schedule.at(episode)
    t_c = cfg.cell_schedule.at(episode)

    probs = forward(net, context.tensors, "eval").probs
    probs = np.atleast_2d(probs)
    classes = [int(rng.choice(len(p), p=p / p.sum())) for p in probs]
    action = context.action_from_classes(classes)
    out = context.outcome(action)
    r_new = out.global_reward

    r_best = store.best(task.task_id, 0.0)
    delta = r_new - r_best
    g = decide_global(delta, cfg, t_g, rng)
    if g is Decision.REJECT_PENALIZE:
        cell_dec = []
    else:
        cell_dec = [decide_cell(float(rc), cfg, t_c, rng) for rc in out.cell_rewards]
    b = baseline.value
    scales = gradient_scales(r_new, b, g, cell_dec, len(classes))
    if acc is not None and len(classes):
        accumulate_batch(net, context.tensors, classes, scales, acc)
    improved = update_best_record(store, task.task_id, r_new, action, episode)
    baseline.update(r_new)
    return EpisodeLog(
        episode=episode, task_id=task.task_id, r_new=float(r_new), r_best=float(r_best),
        delta_r_g=float(delta), global_decision=g.value,
        cell_rewards=[float(x) for x in out.cell_rewards],
        cell_decisions=[d.value for d in cell_dec], scales=[float(s) for s in scales],
        actions=classes, cells=list(context.cells), t_g=t_g, t_c=t_c, baseline=b,
        improved_record=improved, tensors=context.tensors)


@dataclass
class TrainingLog:
    episodes: list[EpisodeLog] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.episodes:
                fh.write(e.to_json() + "\n")


def s2c_train(tasks: Sequence[CCOTask], net: PolicyNetwork, cfg: SelfPlayConfig,
              budget: int, w: RewardWeights = RewardWeights(), seed: int = 0,
              store: BestRecordStore | None = None,
              eval_fn: Callable[[PolicyNetwork], dict] | None = None, eval_every: int = 0,
              contexts: dict | None = None,
              progress: Callable[[int, EpisodeLog], None] | None = None):
    """Multi-task S2C training. Returns (net, TrainingLog, BestRecordStore).

    Tasks are cycled in a fresh shuffled order every pass. Gradients are
    applied once ``cfg.batch_size`` samples have accumulated.
    """
    store = store if store is not None else BestRecordStore()
    tlog = TrainingLog()
    if budget <= 0:
        return net, tlog, store
    rng = np.random.default_rng(seed)
    baseline = Baseline(0.0, cfg.baseline_decay)
    n_updates = max(1, budget * min(cfg.top_k, 1_000) // cfg.batch_size)
    opt = SGD(cfg.lr, cfg.momentum, total_steps=n_updates)
    acc = GradientAccumulator(net)
    contexts = contexts if contexts is not None else {}
    buf_x, buf_a, buf_s = [], [], []
    order: list[int] = []
    for ep in range(budget):
        if not order:
            order = list(rng.permutation(len(tasks)))
        task = tasks[order.pop(0)]
        ctx = contexts.get(task.task_id)
        if ctx is None:
            ctx = TaskContext(task, cfg.top_k, net.cfg.k_fov, w=w)
            contexts[task.task_id] = ctx
        elog = s2c_episode(task, net, store, cfg, w, ep, rng, baseline, context=ctx)
        tlog.episodes.append(replace(elog, tensors=None))
        if elog.actions:
            buf_x.append(elog.tensors)
            buf_a += elog.actions
            buf_s += elog.scales
        if len(buf_a) >= cfg.batch_size:
            accumulate_batch(net, np.concatenate(buf_x), buf_a, buf_s, acc)
            apply_update(net, acc, opt)
            buf_x, buf_a, buf_s = [], [], []
        if progress:
            progress(ep, elog)
        if eval_fn and eval_every and (ep + 1) % eval_every == 0:
            snap = {"episode": ep + 1, **eval_fn(net)}
            tlog.snapshots.append(snap)
            log.info("snapshot %s", snap)
    if len(buf_a) >= 2:
        accumulate_batch(net, np.concatenate(buf_x), buf_a, buf_s, acc)
        apply_update(net, acc, opt)
    return net, tlog, store
