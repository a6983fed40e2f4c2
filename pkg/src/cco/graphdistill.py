"""Network graph abstraction and distillation into fixed-shape local tensors.

``build_graph`` turns a measurement report into a cell/UE graph. For a cell
picked for adjustment, ``select_fov`` ranks every other cell by affinity and
keeps the best ``n_neighbors``; ``distill`` lays those cells out along both
axes of a K x K grid (center cell first) and fills M feature channels, one per
cell-pair relation. Per-cell features sit on the diagonal.

Features use fixed normalization constants, never per-sample statistics, so
that tensors from different networks are directly comparable. Every channel is
clipped to [-1, 1].
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .netsim import MeasurementSet, NetworkState, dbm_to_mw
from .reward import RewardWeights, passes

DETECTION_FLOOR = -130.0
AFFINITY_D_SCALE = 500.0
AFFINITY_WEIGHTS = (0.5, 0.5)


@dataclass
class NetworkGraph:
    """Dense cell/UE graph.

    Cell-cell edges are stored as (n, n) matrices: ``distance`` is symmetric,
    ``coupling[i, j]`` is the linear power (mW) that UEs served by ``i``
    receive from ``j``. UE->cell edges are the RSRP entries of ``ue_rsrp``
    where ``detected`` is true; the serving edge is always kept.
    """

    cell_ids: np.ndarray
    positions: np.ndarray
    heights: np.ndarray
    azimuths: np.ndarray
    tilts: np.ndarray
    tx_power: np.ndarray
    distance: np.ndarray
    coupling: np.ndarray
    ue_rsrp: np.ndarray
    detected: np.ndarray
    serving: np.ndarray
    sinr: np.ndarray
    served_count: np.ndarray
    served_rsrp: np.ndarray
    served_sinr: np.ndarray
    health: np.ndarray
    affinity: np.ndarray
    mean_rsrp_from: np.ndarray
    p10_rsrp_from: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    def cell_edges(self):
        """Undirected cell-cell edges as (i, j) pairs with i < j."""
        n = self.n_cells
        return [(i, j) for i in range(n) for j in range(i + 1, n)]


def coupling_matrix(rsrp: np.ndarray, serving: np.ndarray, n_cells: int) -> np.ndarray:
    onehot = np.zeros((n_cells, len(serving)))
    onehot[serving, np.arange(len(serving))] = 1.0
    return onehot @ dbm_to_mw(rsrp)


def cell_health(meas: MeasurementSet, n_cells: int, w: RewardWeights = RewardWeights()):
    """Fraction of each cell's served UEs passing both thresholds.

    A cell serving nobody has nothing to repair and scores 1.
    """
    cov, qual = passes(meas.serving_rsrp, meas.sinr, w)
    ok = (cov & qual).astype(float)
    count = np.bincount(meas.serving, minlength=n_cells).astype(float)
    good = np.bincount(meas.serving, weights=ok, minlength=n_cells)
    return np.where(count > 0, good / np.maximum(count, 1.0), 1.0)


def affinity_matrix(distance: np.ndarray, coupling: np.ndarray) -> np.ndarray:
    n = len(distance)
    w_d, w_c = AFFINITY_WEIGHTS
    off = coupling.copy()
    np.fill_diagonal(off, 0.0)
    peak = off.max(axis=1, keepdims=True) if n > 1 else np.zeros((n, 1))
    rel = np.divide(off, peak, out=np.zeros_like(off), where=peak > 0)
    aff = w_d * np.exp(-distance / AFFINITY_D_SCALE) + w_c * rel
    np.fill_diagonal(aff, 0.0)
    return aff


def build_graph(state: NetworkState, meas: MeasurementSet,
                w: RewardWeights = RewardWeights(),
                detection_floor: float = DETECTION_FLOOR) -> NetworkGraph:
    n = state.n_cells
    pos = np.array([c.position for c in state.cells], dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    distance = np.hypot(diff[..., 0], diff[..., 1])
    rsrp = meas.rsrp
    serving = meas.serving
    n_ue = len(serving)
    coupling = coupling_matrix(rsrp, serving, n)

    detected = rsrp >= detection_floor
    detected[np.arange(n_ue), serving] = True

    count = np.bincount(serving, minlength=n).astype(float)
    denom = np.maximum(count, 1.0)
    served_rsrp = np.bincount(serving, weights=meas.serving_rsrp, minlength=n) / denom
    served_sinr = np.bincount(serving, weights=meas.sinr, minlength=n) / denom

    mean_from = np.full((n, n), np.nan)
    p10_from = np.full((n, n), np.nan)
    order = np.argsort(serving, kind="stable")
    bounds = np.searchsorted(serving[order], np.arange(n + 1))
    for i in range(n):
        rows = order[bounds[i]:bounds[i + 1]]
        if len(rows):
            block = rsrp[rows]
            mean_from[i] = block.mean(axis=0)
            p10_from[i] = np.percentile(block, 10, axis=0)

    return NetworkGraph(
        cell_ids=np.arange(n),
        positions=pos,
        heights=np.array([c.height for c in state.cells]),
        azimuths=np.array([c.azimuth for c in state.cells]),
        tilts=np.array([c.tilt for c in state.cells]),
        tx_power=np.array([c.tx_power for c in state.cells]),
        distance=distance,
        coupling=coupling,
        ue_rsrp=rsrp,
        detected=detected,
        serving=serving,
        sinr=meas.sinr,
        served_count=count,
        served_rsrp=np.where(count > 0, served_rsrp, np.nan),
        served_sinr=np.where(count > 0, served_sinr, np.nan),
        health=cell_health(meas, n, w),
        affinity=affinity_matrix(distance, coupling),
        mean_rsrp_from=mean_from,
        p10_rsrp_from=p10_from,
    )


def compute_affinity(graph: NetworkGraph, i: int, j: int) -> float:
    if i == j:
        raise ValueError("affinity is defined between distinct cells")
    return float(graph.affinity[i, j])


@dataclass(frozen=True)
class FieldOfView:
    center: int
    members: tuple[int, ...]
    k_fov: int

    @property
    def valid(self) -> int:
        return len(self.members)


def select_fov(graph: NetworkGraph, i: int, n_neighbors: int = 31) -> FieldOfView:
    if n_neighbors < 0:
        raise ValueError("n_neighbors must be >= 0")
    others = np.array([j for j in range(graph.n_cells) if j != i], dtype=int)
    if len(others):
        aff = graph.affinity[i, others]
        others = others[np.lexsort((others, -aff))]
    members = (int(i),) + tuple(int(j) for j in others[:n_neighbors])
    return FieldOfView(int(i), members, n_neighbors + 1)


def select_top_k(state: NetworkState, meas: MeasurementSet, k: int,
                 w: RewardWeights = RewardWeights()) -> list[int]:
    """The ``k`` least healthy cells, ties broken by id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    health = cell_health(meas, state.n_cells, w)
    ids = np.arange(state.n_cells)
    order = np.lexsort((ids, health))
    return [int(c) for c in order[:k]]


# -- channels --------------------------------------------------------------
def _rsrp_scale(x):
    # [-140, -40] dBm -> [-1, 1]
    return (np.asarray(x) + 90.0) / 50.0


def _ratio_db_scale(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 10.0 * np.log10(num / den)
    db = np.where(np.isfinite(db), db, -np.inf)
    return 1.0 + db / 20.0  # 0 dB -> 1, -40 dB -> -1


def _diag(values):
    return np.diag(np.asarray(values, dtype=float))


def _ch_mask(g, idx):
    return np.ones((len(idx), len(idx)))


def _ch_center(g, idx):
    out = np.zeros((len(idx), len(idx)))
    out[0, :] = 1.0
    out[:, 0] = 1.0
    return out


def _ch_tilt(g, idx):
    return _diag((g.tilts[idx] - 7.5) / 7.5)


def _ch_az_sin(g, idx):
    return _diag(np.sin(np.radians(g.azimuths[idx])))


def _ch_az_cos(g, idx):
    return _diag(np.cos(np.radians(g.azimuths[idx])))


def _ch_height(g, idx):
    return _diag((g.heights[idx] - 30.0) / 20.0)


def _ch_tx_power(g, idx):
    return _diag((g.tx_power[idx] - 15.0) / 10.0)


def _ch_load(g, idx):
    mean = max(g.served_count.mean(), 1e-9)
    return _diag(g.served_count[idx] / mean - 1.0)


def _ch_served_rsrp(g, idx):
    return _diag(np.nan_to_num(_rsrp_scale(g.served_rsrp[idx]), nan=-1.0))


def _ch_served_sinr(g, idx):
    return _diag(np.nan_to_num(g.served_sinr[idx] / 20.0, nan=-1.0))


def _ch_health(g, idx):
    return _diag(2.0 * g.health[idx] - 1.0)


def _ch_distance(g, idx):
    return g.distance[np.ix_(idx, idx)] / 2000.0


def _rel_bearing(g, idx):
    p = g.positions[idx]
    dx = p[None, :, 0] - p[:, None, 0]
    dy = p[None, :, 1] - p[:, None, 1]
    rel = np.radians(np.degrees(np.arctan2(dx, dy)) - g.azimuths[idx][:, None])
    colocated = np.hypot(dx, dy) < 1.0
    return rel, colocated


def _ch_bearing_sin(g, idx):
    rel, co = _rel_bearing(g, idx)
    return np.where(co, 0.0, np.sin(rel))


def _ch_bearing_cos(g, idx):
    rel, co = _rel_bearing(g, idx)
    return np.where(co, 0.0, np.cos(rel))


def _ch_height_delta(g, idx):
    h = g.heights[idx]
    return (h[:, None] - h[None, :]) / 20.0


def _ch_coupling_jk(g, idx):
    c = g.coupling[np.ix_(idx, idx)]
    own = np.diag(c)[:, None]
    return _ratio_db_scale(c, own)


def _ch_coupling_kj(g, idx):
    return _ch_coupling_jk(g, idx).T


def _ch_affinity(g, idx):
    return g.affinity[np.ix_(idx, idx)]


def _ch_overlap(g, idx):
    d = g.detected[:, idx].astype(float)
    inter = d.T @ d
    size = np.diag(inter)
    union = size[:, None] + size[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _ch_rsrp_from(g, idx):
    return np.nan_to_num(_rsrp_scale(g.mean_rsrp_from[np.ix_(idx, idx)]), nan=-1.0)


def _ch_rsrp_p10(g, idx):
    return np.nan_to_num(_rsrp_scale(g.p10_rsrp_from[np.ix_(idx, idx)]), nan=-1.0)


def _ch_tilt_diff(g, idx):
    t = g.tilts[idx]
    return (t[:, None] - t[None, :]) / 15.0


# name -> (function, kind); "cell" channels keep only their diagonal
CHANNELS = {
    "mask": (_ch_mask, "pair"),
    "center": (_ch_center, "pair"),
    "tilt": (_ch_tilt, "cell"),
    "azimuth_sin": (_ch_az_sin, "cell"),
    "azimuth_cos": (_ch_az_cos, "cell"),
    "height": (_ch_height, "cell"),
    "tx_power": (_ch_tx_power, "cell"),
    "served_load": (_ch_load, "cell"),
    "served_rsrp": (_ch_served_rsrp, "cell"),
    "served_sinr": (_ch_served_sinr, "cell"),
    "health": (_ch_health, "cell"),
    "distance": (_ch_distance, "pair"),
    "bearing_sin": (_ch_bearing_sin, "pair"),
    "bearing_cos": (_ch_bearing_cos, "pair"),
    "height_delta": (_ch_height_delta, "pair"),
    "coupling_jk": (_ch_coupling_jk, "pair"),
    "coupling_kj": (_ch_coupling_kj, "pair"),
    "affinity": (_ch_affinity, "pair"),
    "overlap": (_ch_overlap, "pair"),
    "rsrp_from_k": (_ch_rsrp_from, "pair"),
    "rsrp_from_k_p10": (_ch_rsrp_p10, "pair"),
    "tilt_diff": (_ch_tilt_diff, "pair"),
}

DEFAULT_CHANNELS = tuple(CHANNELS)


@dataclass(frozen=True)
class ChannelRegistry:
    names: tuple[str, ...] = DEFAULT_CHANNELS

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names or names[0] != "mask":
            raise ValueError("channel 0 must be the validity mask 'mask'")
        unknown = [n for n in names if n not in CHANNELS]
        if unknown:
            raise ValueError(f"unknown channel name(s): {', '.join(unknown)}")
        if len(set(names)) != len(names):
            raise ValueError("duplicate channel names")

    def __len__(self):
        return len(self.names)


@dataclass
class LocalTensor:
    data: np.ndarray  # (K, K, M)
    names: tuple[str, ...]
    center: int

    @property
    def shape(self):
        return self.data.shape


def distill(graph: NetworkGraph, fov: FieldOfView,
            registry: ChannelRegistry = ChannelRegistry()) -> LocalTensor:
    k = fov.k_fov
    idx = np.array(fov.members, dtype=int)
    v = len(idx)
    out = np.zeros((k, k, len(registry)))
    for m, name in enumerate(registry.names):
        fn, kind = CHANNELS[name]
        block = np.asarray(fn(graph, idx), dtype=float)
        if kind == "cell":
            block = np.diag(np.diag(block))
        out[:v, :v, m] = block
    np.clip(out, -1.0, 1.0, out=out)
    out[~np.isfinite(out)] = -1.0
    return LocalTensor(out, registry.names, fov.center)


def distill_cells(state: NetworkState, meas: MeasurementSet, cells: Sequence[int],
                  k_fov: int = 32, registry: ChannelRegistry = ChannelRegistry(),
                  w: RewardWeights = RewardWeights(), graph: NetworkGraph | None = None):
    """Tensors and fields of view for several cells of one network."""
    if graph is None:
        graph = build_graph(state, meas, w)
    fovs = [select_fov(graph, c, k_fov - 1) for c in cells]
    return [distill(graph, f, registry) for f in fovs], fovs, graph


# -- serialization ---------------------------------------------------------
def save_tensors(path, tensors: Sequence[np.ndarray], names: Sequence[str],
                 centers: Sequence[int], extra: dict | None = None) -> None:
    """Flat little-endian float32 records plus a JSON sidecar (``path``.json)."""
    path = Path(path)
    arr = np.stack([np.asarray(t) for t in tensors]) if len(tensors) else np.zeros((0,))
    path.write_bytes(arr.astype("<f4").tobytes())
    meta = {
        "version": 1,
        "count": int(len(tensors)),
        "shape": list(arr.shape[1:]) if len(tensors) else [],
        "names": list(names),
        "centers": [int(c) for c in centers],
    }
    if extra:
        meta.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True))


def load_tensors(path):
    """Inverse of :func:`save_tensors`; returns (array, sidecar dict)."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    shape = [meta["count"]] + meta["shape"]
    expected = int(np.prod(shape)) if meta["count"] else 0
    if raw.size != expected:
        raise ValueError(f"{path}: expected {expected} floats, found {raw.size}")
    return raw.reshape(shape).astype(np.float32), meta


def save_local_tensor(path, t: LocalTensor) -> None:
    save_tensors(path, [t.data], t.names, [t.center])


def load_local_tensor(path) -> LocalTensor:
    arr, meta = load_tensors(path)
    return LocalTensor(arr[0], tuple(meta["names"]), meta["centers"][0])
