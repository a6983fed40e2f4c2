"""Per-task working set shared by the optimizers and the evaluator.

A :class:`TaskContext` fixes everything that depends only on a task's initial
state: the radio map, the before-measurements, the top-K cells and their
distilled tensors. Trying an action then only costs one re-measurement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphdistill import (ChannelRegistry, build_graph, distill_cells, select_fov,
                           select_top_k)
from .netsim import ActionVector, MeasurementSet, RadioMap, apply_tilt_deltas
from .reward import RewardWeights, cell_reward, global_reward, passes
from .scenario import CCOTask


class FastEvaluator:
    """Incremental reward evaluation for tilt vectors of one task.

    Keeps the (cells x UEs) RSRP matrix for the current tilts so a single-cell
    change recomputes one row. Rewards agree with a full
    :meth:`RadioMap.measure` up to float summation order, which can only matter
    for a UE sitting exactly on a threshold.
    """

    def __init__(self, radio: RadioMap, tilts, w: RewardWeights):
        self.radio = radio
        self.w = w
        self.tilts = np.array(tilts, dtype=float)
        self.rows = radio.rsrp_rows(self.tilts)
        self.lin = np.power(10.0, self.rows / 10.0)
        self.noise = 10.0 ** (radio.noise_floor / 10.0)
        n = self.rows.shape[1]
        self._idx = np.arange(n)
        self.base_cov, self.base_q = self._counts(self.rows, self.lin)
        self.n_ues = n

    def _counts(self, rows, lin):
        serving = np.argmax(rows, axis=0)
        sig_db = rows[serving, self._idx]
        sig = lin[serving, self._idx]
        interference = np.maximum(lin.sum(axis=0) - sig, 0.0)
        sinr = 10.0 * np.log10(sig / (self.noise + interference))
        cov, q = passes(sig_db, sinr, self.w)
        return np.count_nonzero(cov), np.count_nonzero(q)

    def _reward(self, cov, q):
        w = self.w
        return 100.0 * (w.w_cov * (cov - self.base_cov) / self.n_ues
                        + w.w_qual * (q - self.base_q) / self.n_ues)

    def try_cell(self, cell: int, tilt: float):
        """Reward if ``cell`` moved to ``tilt``; returns (reward, row, lin_row)."""
        row = self.radio.rsrp_rows([tilt], [cell])[0]
        lin_row = np.power(10.0, row / 10.0)
        old_row, old_lin = self.rows[cell].copy(), self.lin[cell].copy()
        self.rows[cell], self.lin[cell] = row, lin_row
        r = self._reward(*self._counts(self.rows, self.lin))
        self.rows[cell], self.lin[cell] = old_row, old_lin
        return r, row, lin_row

    def commit(self, cell: int, tilt: float, row, lin_row):
        self.tilts[cell] = tilt
        self.rows[cell] = row
        self.lin[cell] = lin_row

    def reward_of(self, tilts) -> float:
        rows = self.radio.rsrp_rows(np.asarray(tilts, dtype=float))
        return self._reward(*self._counts(rows, np.power(10.0, rows / 10.0)))


_RADIO_CACHE: dict[int, tuple] = {}


def radio_map_for(network) -> RadioMap:
    """Radio map cached per network object (tilt-independent)."""
    key = id(network)
    hit = _RADIO_CACHE.get(key)
    if hit is not None and hit[0] is network:
        return hit[1]
    if len(_RADIO_CACHE) > 64:
        _RADIO_CACHE.clear()
    rm = RadioMap(network)
    _RADIO_CACHE[key] = (network, rm)
    return rm


@dataclass
class Outcome:
    after: MeasurementSet
    global_reward: float
    coverage_delta: float
    quality_delta: float
    cell_rewards: np.ndarray
    action: ActionVector


class TaskContext:
    def __init__(self, task: CCOTask, k: int, k_fov: int = 32,
                 registry: ChannelRegistry = ChannelRegistry(),
                 w: RewardWeights = RewardWeights(), with_tensors: bool = True):
        self.task = task
        self.w = w
        self.k_fov = k_fov
        self.state = task.initial_state()
        self.radio = radio_map_for(task.network)
        self.tilts0 = np.array(task.initial_tilts, dtype=float)
        self.before = self.radio.measure(self.tilts0)
        self.cells = select_top_k(self.state, self.before, min(k, self.state.n_cells), w)
        self.tensors = None
        self.fovs = None
        if with_tensors:
            tensors, self.fovs, _ = distill_cells(self.state, self.before, self.cells,
                                                  k_fov, registry, w)
            self.tensors = np.stack([t.data for t in tensors]).astype(np.float32)
        else:
            g = build_graph(self.state, self.before, w)
            self.fovs = [select_fov(g, c, k_fov - 1) for c in self.cells]

    def action_from_classes(self, classes) -> ActionVector:
        return ActionVector(tuple((c, int(a) - 5) for c, a in zip(self.cells, classes)))

    def outcome(self, action: ActionVector) -> Outcome:
        tilts = apply_tilt_deltas(self.tilts0, action, self.state.tilt_limits)
        after = self.radio.measure(tilts)
        br = global_reward(self.before, after, self.w)
        cell_r = np.array([cell_reward(self.before, after, c, f, self.w)
                           for c, f in zip(self.cells, self.fovs)])
        return Outcome(after, br.global_reward, br.coverage_delta, br.quality_delta,
                       cell_r, action)
