"""Global and per-cell CCO rewards, and the self-play best-record store.

Rewards are percent-point changes in the fraction of UEs that meet the
coverage (serving RSRP) and quality (SINR) thresholds, weighted and summed.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netsim import ActionVector, MeasurementSet


@dataclass(frozen=True)
class RewardWeights:
    w_cov: float = 0.5
    w_qual: float = 0.5
    rsrp_threshold: float = -105.0
    sinr_threshold: float = -3.0

    def __post_init__(self):
        if not (0 <= self.w_cov <= 1 and 0 <= self.w_qual <= 1):
            raise ValueError("reward weights must lie in [0, 1]")
        if abs(self.w_cov + self.w_qual - 1.0) > 1e-12:
            raise ValueError("w_cov + w_qual must equal 1")


@dataclass
class RewardBreakdown:
    global_reward: float
    coverage_delta: float
    quality_delta: float
    per_cell: dict[int, float] = field(default_factory=dict)


def passes(serving_rsrp: np.ndarray, sinr: np.ndarray, w: RewardWeights):
    """Boolean coverage and quality pass masks per UE."""
    return serving_rsrp >= w.rsrp_threshold, sinr >= w.sinr_threshold


def _delta(before_cov, before_q, after_cov, after_q, w: RewardWeights):
    n = len(before_cov)
    if n == 0:
        return 0.0, 0.0, 0.0
    cov = (np.count_nonzero(after_cov) - np.count_nonzero(before_cov)) / n
    qual = (np.count_nonzero(after_q) - np.count_nonzero(before_q)) / n
    return 100.0 * (w.w_cov * cov + w.w_qual * qual), 100.0 * cov, 100.0 * qual


def _check_same_ues(before: MeasurementSet, after: MeasurementSet):
    if len(before.ue_ids) != len(after.ue_ids) or np.any(before.ue_ids != after.ue_ids):
        raise ValueError("before/after measurement sets cover different UEs")


def global_reward(before: MeasurementSet, after: MeasurementSet,
                  w: RewardWeights = RewardWeights()) -> RewardBreakdown:
    _check_same_ues(before, after)
    bc, bq = passes(before.serving_rsrp, before.sinr, w)
    ac, aq = passes(after.serving_rsrp, after.sinr, w)
    r, cov, qual = _delta(bc, bq, ac, aq, w)
    return RewardBreakdown(r, cov, qual)


def cell_scope(cell: int, fov, n_neighbors: int = 8) -> list[int]:
    """The cell plus its top affinity neighbours from a field of view."""
    members = list(fov.members[: fov.valid])
    if cell not in members:
        raise ValueError(f"cell {cell} is not in the field of view")
    return [cell] + [m for m in members[1:] if m != cell][:n_neighbors]


def cell_reward(before: MeasurementSet, after: MeasurementSet, cell: int, fov,
                w: RewardWeights = RewardWeights(), n_neighbors: int = 8) -> float:
    """Reward restricted to UEs served (before) by ``cell`` or its top neighbours."""
    _check_same_ues(before, after)
    mask = np.isin(before.serving, cell_scope(cell, fov, n_neighbors))
    if not mask.any():
        return 0.0
    bc, bq = passes(before.serving_rsrp[mask], before.sinr[mask], w)
    ac, aq = passes(after.serving_rsrp[mask], after.sinr[mask], w)
    return _delta(bc, bq, ac, aq, w)[0]


@dataclass
class Record:
    best_reward: float
    action: ActionVector
    episode: int


class BestRecordStore:
    """Best global reward seen per task, with compare-and-replace under a lock."""

    def __init__(self):
        self._records: dict[str, Record] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._records)

    def __contains__(self, task_id):
        return task_id in self._records

    def get(self, task_id: str) -> Record | None:
        return self._records.get(task_id)

    def best(self, task_id: str, default: float = 0.0) -> float:
        rec = self._records.get(task_id)
        return default if rec is None else rec.best_reward

    def update(self, task_id: str, reward: float, action: ActionVector,
               episode: int = 0) -> bool:
        with self._lock:
            rec = self._records.get(task_id)
            if rec is not None and not reward > rec.best_reward:
                return False
            self._records[task_id] = Record(float(reward), action, int(episode))
            return True

    def items(self):
        return sorted(self._records.items())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for task_id, rec in self.items():
                fh.write(json.dumps({
                    "task_id": task_id, "best_reward": rec.best_reward,
                    "action": [list(p) for p in rec.action.deltas],
                    "episode": rec.episode,
                }, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "BestRecordStore":
        store = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            store._records[doc["task_id"]] = Record(
                float(doc["best_reward"]),
                ActionVector(tuple(tuple(p) for p in doc["action"])),
                int(doc["episode"]))
        return store


def update_best_record(store: BestRecordStore, task_id: str, reward: float,
                       action: ActionVector, episode: int = 0) -> bool:
    return store.update(task_id, reward, action, episode)
