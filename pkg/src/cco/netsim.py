"""Deterministic radio simulator.

Cells are sectorized macro antennas with a separable quadratic beam pattern,
links follow a log-distance pathloss with frozen lognormal shadowing, and a
measurement report gives every UE its per-cell RSRP, serving cell and SINR.

All angles are in degrees. Azimuths are compass bearings (0 = +y, clockwise).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

UE_HEIGHT = 1.5
TILT_LIMITS = (0.0, 15.0)
DELTA_RANGE = (-5, 5)
STATE_VERSION = 1

_V_FLOOR = 20.0
_H_FLOOR = 25.0


@dataclass(frozen=True)
class CellConfig:
    id: int
    position: tuple[float, float]
    height: float = 30.0
    azimuth: float = 0.0
    tilt: float = 6.0
    tx_power: float = 18.0
    max_gain: float = 15.0
    vertical_beamwidth: float = 10.0
    horizontal_beamwidth: float = 65.0

    def __post_init__(self):
        if self.vertical_beamwidth <= 0 or self.horizontal_beamwidth <= 0:
            raise ValueError(f"cell {self.id}: beamwidths must be positive")
        if not np.isfinite(self.tx_power):
            raise ValueError(f"cell {self.id}: tx_power must be finite")


@dataclass(frozen=True)
class UserEquipment:
    id: int
    position: tuple[float, float]
    indoor: bool = False


@dataclass(frozen=True)
class PropagationModel:
    variant: str = "ModelA"
    pathloss_intercept: float = 128.1
    pathloss_slope: float = 37.6
    shadowing_sigma: float = 6.0
    indoor_penetration_loss: float = 0.0
    min_coupling_distance: float = 10.0

    def __post_init__(self):
        if self.variant not in ("ModelA", "ModelB"):
            raise ValueError(f"unknown propagation variant {self.variant!r}")
        if self.pathloss_slope <= 0:
            raise ValueError("pathloss_slope must be positive")
        if self.shadowing_sigma < 0:
            raise ValueError("shadowing_sigma must be non-negative")
        if self.min_coupling_distance <= 0:
            raise ValueError("min_coupling_distance must be positive")


def model_a(**overrides) -> PropagationModel:
    return replace(PropagationModel(), **overrides)


def model_b(**overrides) -> PropagationModel:
    base = PropagationModel("ModelB", 120.9, 37.6, 8.0, 20.0)
    return replace(base, **overrides)


@dataclass(frozen=True)
class NetworkState:
    """Full simulator world state.

    Cells and UEs are kept sorted by id so that every derived quantity is
    independent of the order they were supplied in.
    """

    cells: tuple[CellConfig, ...]
    ues: tuple[UserEquipment, ...]
    propagation: PropagationModel = field(default_factory=PropagationModel)
    noise_floor: float = -125.0
    shadowing_seed: int = 0
    tilt_limits: tuple[float, float] = TILT_LIMITS

    def __post_init__(self):
        cells = tuple(sorted(self.cells, key=lambda c: c.id))
        ues = tuple(sorted(self.ues, key=lambda u: u.id))
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "ues", ues)
        if not cells or not ues:
            raise ValueError("a network needs at least one cell and one UE")
        if [c.id for c in cells] != list(range(len(cells))):
            raise ValueError("cell ids must be unique and dense 0..n-1")
        if len({u.id for u in ues}) != len(ues):
            raise ValueError("UE ids must be unique")
        lo, hi = self.tilt_limits
        if lo > hi:
            raise ValueError("tilt_limits must be ordered")
        for c in cells:
            if not lo <= c.tilt <= hi:
                raise ValueError(f"cell {c.id}: tilt {c.tilt} outside [{lo}, {hi}]")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_ues(self) -> int:
        return len(self.ues)

    @property
    def tilts(self) -> np.ndarray:
        return np.array([c.tilt for c in self.cells], dtype=float)

    def with_tilts(self, tilts: Sequence[float]) -> "NetworkState":
        if len(tilts) != self.n_cells:
            raise ValueError(f"expected {self.n_cells} tilts, got {len(tilts)}")
        cells = tuple(replace(c, tilt=float(t)) for c, t in zip(self.cells, tilts))
        return replace(self, cells=cells)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": STATE_VERSION,
            "cells": [
                {
                    "id": c.id, "position": list(c.position), "height": c.height,
                    "azimuth": c.azimuth, "tilt": c.tilt, "tx_power": c.tx_power,
                    "max_gain": c.max_gain,
                    "vertical_beamwidth": c.vertical_beamwidth,
                    "horizontal_beamwidth": c.horizontal_beamwidth,
                }
                for c in self.cells
            ],
            "ues": [
                {"id": u.id, "position": list(u.position), "indoor": u.indoor}
                for u in self.ues
            ],
            "propagation": {
                "variant": self.propagation.variant,
                "pathloss_intercept": self.propagation.pathloss_intercept,
                "pathloss_slope": self.propagation.pathloss_slope,
                "shadowing_sigma": self.propagation.shadowing_sigma,
                "indoor_penetration_loss": self.propagation.indoor_penetration_loss,
                "min_coupling_distance": self.propagation.min_coupling_distance,
            },
            "noise_floor": self.noise_floor,
            "shadowing_seed": self.shadowing_seed,
            "tilt_limits": list(self.tilt_limits),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "NetworkState":
        if doc.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported network state version {doc.get('version')!r}")
        cells = [
            CellConfig(**{**c, "position": tuple(c["position"])}) for c in doc["cells"]
        ]
        ues = [
            UserEquipment(u["id"], tuple(u["position"]), bool(u["indoor"]))
            for u in doc["ues"]
        ]
        return cls(
            cells=tuple(cells),
            ues=tuple(ues),
            propagation=PropagationModel(**doc["propagation"]),
            noise_floor=float(doc["noise_floor"]),
            shadowing_seed=int(doc["shadowing_seed"]),
            tilt_limits=tuple(doc.get("tilt_limits", TILT_LIMITS)),
        )

    @classmethod
    def from_json(cls, text: str) -> "NetworkState":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "NetworkState":
        return cls.from_json(Path(path).read_text())


# -- shadowing ---------------------------------------------------------
_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def shadowing_normals(seed: int, cell_ids, ue_ids) -> np.ndarray:
    """Standard normal draws keyed by (seed, cell id, UE id).

    Broadcasts ``cell_ids`` against ``ue_ids``. Each value depends only on its
    own key, so any subset or ordering of the links reproduces the same draw.
    """
    c = np.asarray(cell_ids, dtype=np.uint64)
    u = np.asarray(ue_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(np.full(np.broadcast_shapes(c.shape, u.shape),
                                np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        h = _splitmix64(h ^ (c * np.uint64(0xD1B54A32D192ED03)))
        h = _splitmix64(h ^ (u * np.uint64(0x8CB92BA72F3D8DD7)))
        h2 = _splitmix64(h)
    # 53-bit uniforms in (0, 1]
    u1 = ((h >> np.uint64(11)).astype(np.float64) + 1.0) / 2.0**53
    u2 = (h2 >> np.uint64(11)).astype(np.float64) / 2.0**53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


# -- geometry and link budget -------------------------------------------
def _wrap180(deg):
    """Wrap to (-180, 180]."""
    out = -((-np.asarray(deg, dtype=float) + 180.0) % 360.0) + 180.0
    return out


def link_geometry(state: NetworkState):
    """Per-link horizontal distance, depression angle and bearing offset.

    Returns three (n_cells, n_ues) arrays. Distances are clamped to the model's
    minimum coupling distance.
    """
    cp = np.array([c.position for c in state.cells], dtype=float)
    h = np.array([c.height for c in state.cells], dtype=float)
    az = np.array([c.azimuth for c in state.cells], dtype=float)
    up = np.array([u.position for u in state.ues], dtype=float)
    dx = up[None, :, 0] - cp[:, None, 0]
    dy = up[None, :, 1] - cp[:, None, 1]
    d = np.maximum(np.hypot(dx, dy), state.propagation.min_coupling_distance)
    theta = np.degrees(np.arctan2((h - UE_HEIGHT)[:, None], d))
    bearing = np.degrees(np.arctan2(dx, dy))
    phi = _wrap180(bearing - az[:, None])
    return d, theta, phi


def pattern_attenuation(off_vertical, off_horizontal, v_bw, h_bw):
    """Vertical and horizontal attenuation in dB (both <= 0)."""
    a_v = -np.minimum(12.0 * (off_vertical / v_bw) ** 2, _V_FLOOR)
    a_h = -np.minimum(12.0 * (off_horizontal / h_bw) ** 2, _H_FLOOR)
    return a_v, a_h


def antenna_gain(cell: CellConfig, ue: UserEquipment,
                 min_coupling_distance: float = 10.0) -> float:
    """Antenna gain in dBi from ``cell`` toward ``ue``."""
    dx = ue.position[0] - cell.position[0]
    dy = ue.position[1] - cell.position[1]
    d = max(float(np.hypot(dx, dy)), min_coupling_distance)
    theta = np.degrees(np.arctan2(cell.height - UE_HEIGHT, d))
    phi = _wrap180(np.degrees(np.arctan2(dx, dy)) - cell.azimuth)
    a_v, a_h = pattern_attenuation(theta - cell.tilt, phi,
                                   cell.vertical_beamwidth, cell.horizontal_beamwidth)
    return float(cell.max_gain + a_v + a_h)


def path_loss(model: PropagationModel, cell: CellConfig, ue: UserEquipment,
              seed: int) -> float:
    d = np.hypot(ue.position[0] - cell.position[0], ue.position[1] - cell.position[1])
    d = max(float(d), model.min_coupling_distance)
    pl = model.pathloss_intercept + model.pathloss_slope * np.log10(d / 1000.0)
    if model.shadowing_sigma > 0:
        pl += model.shadowing_sigma * float(shadowing_normals(seed, cell.id, ue.id))
    if ue.indoor:
        pl += model.indoor_penetration_loss
    return float(pl)


def path_loss_matrix(state: NetworkState, distance: np.ndarray | None = None) -> np.ndarray:
    model = state.propagation
    if distance is None:
        distance = link_geometry(state)[0]
    pl = model.pathloss_intercept + model.pathloss_slope * np.log10(distance / 1000.0)
    if model.shadowing_sigma > 0:
        cid = np.array([c.id for c in state.cells])[:, None]
        uid = np.array([u.id for u in state.ues])[None, :]
        pl = pl + model.shadowing_sigma * shadowing_normals(state.shadowing_seed, cid, uid)
    indoor = np.array([u.indoor for u in state.ues])
    return pl + np.where(indoor, model.indoor_penetration_loss, 0.0)[None, :]


@dataclass(frozen=True)
class MeasurementSet:
    """Measurement report for every UE.

    ``rsrp`` has shape (n_ues, n_cells) in dBm; rows follow ``ue_ids`` and
    columns follow cell ids.
    """

    ue_ids: np.ndarray
    rsrp: np.ndarray
    serving: np.ndarray
    sinr: np.ndarray

    @property
    def serving_rsrp(self) -> np.ndarray:
        return self.rsrp[np.arange(len(self.serving)), self.serving]

    def to_csv(self, path) -> None:
        n_cells = self.rsrp.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ue_id", "serving_cell", "sinr_db"]
                       + [f"rsrp_{c}" for c in range(n_cells)])
            for uid, s, q, row in zip(self.ue_ids, self.serving, self.sinr, self.rsrp):
                w.writerow([int(uid), int(s), repr(float(q))] + [repr(float(v)) for v in row])


def dbm_to_mw(x):
    return np.power(10.0, np.asarray(x) / 10.0)


def measure_from_rsrp(rsrp: np.ndarray, noise_floor: float):
    """Serving cell (ties to lowest id) and SINR for an (n_ues, n_cells) RSRP matrix."""
    serving = np.argmax(rsrp, axis=1)  # first max = lowest id
    lin = dbm_to_mw(rsrp)
    idx = np.arange(rsrp.shape[0])
    signal = lin[idx, serving]
    interference = lin.sum(axis=1) - signal
    sinr = 10.0 * np.log10(signal / (dbm_to_mw(noise_floor) + np.maximum(interference, 0.0)))
    return serving, sinr


class RadioMap:
    """Tilt-independent link quantities cached for fast re-evaluation.

    Only the vertical pattern depends on tilt, so a new tilt vector costs one
    attenuation evaluation per link.
    """

    def __init__(self, state: NetworkState):
        self.state = state
        d, theta, phi = link_geometry(state)
        self.distance = d
        self.theta = theta
        v_bw = np.array([c.vertical_beamwidth for c in state.cells])
        h_bw = np.array([c.horizontal_beamwidth for c in state.cells])
        self._v_bw = v_bw[:, None]
        _, a_h = pattern_attenuation(0.0, phi, 1.0, h_bw[:, None])
        tx = np.array([c.tx_power for c in state.cells])
        g = np.array([c.max_gain for c in state.cells])
        # everything but the vertical pattern, (n_cells, n_ues)
        self.static = (tx + g)[:, None] + a_h - path_loss_matrix(state, d)
        self.noise_floor = state.noise_floor

    def rsrp_rows(self, tilts, cells=None) -> np.ndarray:
        """RSRP rows (cells x UEs) for the given tilt(s)."""
        if cells is None:
            cells = slice(None)
        tilts = np.asarray(tilts, dtype=float)
        off = self.theta[cells] - np.reshape(tilts, (-1, 1))
        a_v = -np.minimum(12.0 * (off / self._v_bw[cells]) ** 2, _V_FLOOR)
        return self.static[cells] + a_v

    def rsrp(self, tilts) -> np.ndarray:
        return self.rsrp_rows(tilts).T

    def measure(self, tilts) -> MeasurementSet:
        rsrp = np.ascontiguousarray(self.rsrp(tilts))
        serving, sinr = measure_from_rsrp(rsrp, self.noise_floor)
        ue_ids = np.array([u.id for u in self.state.ues])
        return MeasurementSet(ue_ids, rsrp, serving, sinr)


def compute_measurements(state: NetworkState) -> MeasurementSet:
    return RadioMap(state).measure(state.tilts)


# -- actions -------------------------------------------------------------
@dataclass(frozen=True)
class ActionVector:
    """Integer tilt deltas for selected cells, as (cell id, delta) pairs."""

    deltas: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        pairs = tuple((int(c), int(d)) for c, d in self.deltas)
        object.__setattr__(self, "deltas", pairs)
        ids = [c for c, _ in pairs]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cell ids in action")
        lo, hi = DELTA_RANGE
        for c, d in pairs:
            if not lo <= d <= hi:
                raise ValueError(f"tilt delta {d} for cell {c} outside [{lo}, {hi}]")

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int]) -> "ActionVector":
        return cls(tuple(sorted(mapping.items())))

    def as_dict(self) -> dict[int, int]:
        return dict(self.deltas)

    def negated(self) -> "ActionVector":
        return ActionVector(tuple((c, -d) for c, d in self.deltas))

    def __len__(self):
        return len(self.deltas)


def apply_tilt_deltas(tilts: np.ndarray, action: ActionVector,
                      limits=TILT_LIMITS) -> np.ndarray:
    out = np.array(tilts, dtype=float)
    for c, d in action.deltas:
        if not 0 <= c < len(out):
            raise KeyError(f"action names unknown cell id {c} (network has {len(out)} cells)")
        out[c] = min(max(out[c] + d, limits[0]), limits[1])
    return out


def apply_action(state: NetworkState, action: ActionVector) -> NetworkState:
    if not action.deltas:
        return state
    tilts = apply_tilt_deltas(state.tilts, action, state.tilt_limits)
    return state.with_tilts(tilts)
