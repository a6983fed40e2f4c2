"""Randomized networks and CCO task sets.

A task is a network plus one initial tilt assignment. Everything here is a
pure function of its seed; splits draw from separate seed namespaces so
training, validation and test tasks never share a generator stream.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .netsim import (CellConfig, NetworkState, PropagationModel, UserEquipment,
                     model_a, model_b)

SPLITS = ("train", "val", "test", "transfer")


@dataclass(frozen=True)
class RandomizationSpec:
    cell_count_range: tuple[int, int] = (30, 60)
    ue_count_range: tuple[int, int] = (400, 620)
    area_side: float = 8000.0
    site_layout: str = "hex_grid_jittered"
    sectors_per_site: int = 3
    tilt_init_range: tuple[int, int] = (0, 10)
    propagation_variant: str = "ModelA"
    # fractional half-widths, e.g. 0.02 -> value * U(0.98, 1.02)
    parameter_jitter: dict = field(default_factory=lambda: {
        "intercept": 0.02, "slope": 0.03, "sigma": 0.2, "tx_power": 0.1})
    indoor_fraction: float = 0.0
    height_range: tuple[float, float] = (25.0, 40.0)
    site_jitter: float = 0.15
    hotspot_fraction: float = 0.5
    tx_power: float = 15.0

    def validate(self) -> None:
        lo, hi = self.cell_count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid cell_count_range {self.cell_count_range}")
        lo, hi = self.ue_count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid ue_count_range {self.ue_count_range}")
        if not self.area_side > 0:
            raise ValueError("area_side must be positive")
        if self.site_layout not in ("hex_grid_jittered", "uniform_random"):
            raise ValueError(f"unknown site_layout {self.site_layout!r}")
        if self.sectors_per_site < 1:
            raise ValueError("sectors_per_site must be >= 1")
        if self.tilt_init_range[1] < self.tilt_init_range[0]:
            raise ValueError("tilt_init_range is empty")
        if not 0.0 <= self.indoor_fraction <= 1.0:
            raise ValueError("indoor_fraction must lie in [0, 1]")
        if self.propagation_variant not in ("ModelA", "ModelB"):
            raise ValueError(f"unknown propagation variant {self.propagation_variant!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RandomizationSpec":
        doc = dict(doc)
        for key in ("cell_count_range", "ue_count_range", "tilt_init_range", "height_range"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def model_a_spec(**overrides) -> RandomizationSpec:
    """Desk stand-in for the small source-domain networks."""
    return replace(RandomizationSpec(), **overrides)


def model_b_spec(**overrides) -> RandomizationSpec:
    """Larger networks with different physics and indoor users."""
    base = RandomizationSpec(
        cell_count_range=(100, 140), ue_count_range=(2480, 19840),
        area_side=13000.0, propagation_variant="ModelB", indoor_fraction=0.3)
    return replace(base, **overrides)


def _hex_sites(n_sites: int, side: float, rng: np.random.Generator, jitter: float):
    isd = math.sqrt(side * side / n_sites / (math.sqrt(3) / 2))
    rows = int(math.ceil(side / (isd * math.sqrt(3) / 2))) + 3
    cols = int(math.ceil(side / isd)) + 3
    pts = []
    for r in range(-rows, rows + 1):
        for q in range(-cols, cols + 1):
            pts.append(((q + 0.5 * (r % 2)) * isd, r * isd * math.sqrt(3) / 2))
    pts = np.array(pts)
    order = np.lexsort((pts[:, 0], pts[:, 1], np.hypot(pts[:, 0], pts[:, 1])))
    sites = pts[order[:n_sites]] + side / 2
    sites = sites + rng.uniform(-jitter, jitter, size=sites.shape) * isd
    return np.clip(sites, 0.0, side), isd


def generate_network(spec: RandomizationSpec, seed: int) -> NetworkState:
    spec.validate()
    rng = np.random.default_rng(seed)
    n_cells = int(rng.integers(spec.cell_count_range[0], spec.cell_count_range[1] + 1))
    n_ues = int(rng.integers(spec.ue_count_range[0], spec.ue_count_range[1] + 1))
    spc = spec.sectors_per_site
    n_sites = int(math.ceil(n_cells / spc))
    side = spec.area_side

    if spec.site_layout == "hex_grid_jittered":
        sites, isd = _hex_sites(n_sites, side, rng, spec.site_jitter)
        base_az = np.tile(np.arange(spc) * 360.0 / spc, n_sites)
        azimuths = (base_az + rng.uniform(-15.0, 15.0, size=base_az.shape)) % 360.0
    else:
        sites = rng.uniform(0.0, side, size=(n_sites, 2))
        isd = side / math.sqrt(n_sites)
        azimuths = rng.uniform(0.0, 360.0, size=n_sites * spc)

    jit = spec.parameter_jitter
    def jitter(value, key):
        j = float(jit.get(key, 0.0))
        return float(value * rng.uniform(1.0 - j, 1.0 + j)) if j else float(value)

    heights = rng.uniform(*spec.height_range, size=n_sites)
    tx_base = spec.tx_power
    cells = []
    for cid in range(n_cells):
        s = cid // spc
        cells.append(CellConfig(
            id=cid,
            position=(float(sites[s, 0]), float(sites[s, 1])),
            height=float(heights[s]),
            azimuth=float(azimuths[cid]),
            tilt=float(rng.integers(spec.tilt_init_range[0], spec.tilt_init_range[1] + 1)),
            tx_power=jitter(tx_base, "tx_power"),
        ))

    n_hot = int(round(spec.hotspot_fraction * n_ues))
    uniform_pts = rng.uniform(0.0, side, size=(n_ues - n_hot, 2))
    centers = sites[rng.integers(0, n_sites, size=n_hot)]
    hot_pts = centers + rng.normal(0.0, 0.35 * isd, size=(n_hot, 2))
    pts = np.clip(np.vstack([uniform_pts, hot_pts]), 0.0, side)
    indoor = rng.random(n_ues) < spec.indoor_fraction
    ues = [UserEquipment(i, (float(p[0]), float(p[1])), bool(f))
           for i, (p, f) in enumerate(zip(pts, indoor))]

    base = model_a() if spec.propagation_variant == "ModelA" else model_b()
    prop = replace(
        base,
        pathloss_intercept=jitter(base.pathloss_intercept, "intercept"),
        pathloss_slope=jitter(base.pathloss_slope, "slope"),
        shadowing_sigma=jitter(base.shadowing_sigma, "sigma"),
    )
    state = NetworkState(
        cells=tuple(cells), ues=tuple(ues), propagation=prop,
        shadowing_seed=int(rng.integers(0, 2**63 - 1)),
    )
    return state


@dataclass(frozen=True)
class CCOTask:
    task_id: str
    network: NetworkState
    initial_tilts: tuple[float, ...]
    seed: int
    network_id: str = "net"

    def __post_init__(self):
        if len(self.initial_tilts) != self.network.n_cells:
            raise ValueError(f"task {self.task_id}: {len(self.initial_tilts)} tilts "
                             f"for {self.network.n_cells} cells")
        lo, hi = self.network.tilt_limits
        if any(not lo <= t <= hi for t in self.initial_tilts):
            raise ValueError(f"task {self.task_id}: initial tilt outside [{lo}, {hi}]")

    def initial_state(self) -> NetworkState:
        return self.network.with_tilts(self.initial_tilts)


def generate_taskset(network: NetworkState, n_states: int, seed: int,
                     tilt_init_range=(0, 10), network_id: str = "net",
                     prefix: str = "") -> list[CCOTask]:
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = tilt_init_range
    tilts = rng.integers(lo, hi + 1, size=(n_states, network.n_cells))
    tag = f"{prefix}{network_id}"
    return [
        CCOTask(f"{tag}-{seed}-{i:05d}", network, tuple(float(t) for t in row),
                seed, network_id)
        for i, row in enumerate(tilts)
    ]


# -- desk suite ----------------------------------------------------------
_SPLIT_CODES = {name: i for i, name in enumerate(SPLITS)}


def split_seed(seed: int, split: str, index: int, kind: int) -> int:
    """Independent seed for (split, item index, purpose) under a master seed."""
    ss = np.random.SeedSequence([seed, _SPLIT_CODES[split], index, kind])
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class SuiteConfig:
    n_networks: int = 10
    train_states: int = 50
    val_states: int = 10
    test_states: int = 10
    transfer_networks: int = 5
    transfer_states: int = 10
    source: RandomizationSpec = field(default_factory=model_a_spec)
    target: RandomizationSpec = field(default_factory=model_b_spec)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "SuiteConfig":
        doc = dict(doc)
        if "source" in doc:
            doc["source"] = RandomizationSpec.from_dict(doc["source"])
        if "target" in doc:
            doc["target"] = RandomizationSpec.from_dict(doc["target"])
        return cls(**doc)


def generate_suite(cfg: SuiteConfig, seed: int) -> dict[str, list[CCOTask]]:
    """Train/val/test tasks on source networks plus a target-model transfer split."""
    networks = {
        f"A{i:03d}": generate_network(cfg.source, split_seed(seed, "train", i, 0))
        for i in range(cfg.n_networks)
    }
    suite: dict[str, list[CCOTask]] = {}
    for split, n_states in (("train", cfg.train_states), ("val", cfg.val_states),
                            ("test", cfg.test_states)):
        tasks: list[CCOTask] = []
        if n_states > 0:
            for i, (nid, net) in enumerate(networks.items()):
                tasks += generate_taskset(net, n_states, split_seed(seed, split, i, 1),
                                          cfg.source.tilt_init_range, nid, prefix=f"{split}-")
        suite[split] = tasks
    tasks = []
    for i in range(cfg.transfer_networks):
        nid = f"B{i:03d}"
        net = generate_network(cfg.target, split_seed(seed, "transfer", i, 0))
        if cfg.transfer_states > 0:
            tasks += generate_taskset(net, cfg.transfer_states,
                                      split_seed(seed, "transfer", i, 1),
                                      cfg.target.tilt_init_range, nid, prefix="transfer-")
    suite["transfer"] = tasks
    return suite


# -- manifests -----------------------------------------------------------
def save_tasks(tasks: Iterable[CCOTask], manifest_path, network_dir) -> None:
    """Write a JSON manifest plus one network file per distinct network."""
    manifest_path = Path(manifest_path)
    network_dir = Path(network_dir)
    network_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, str] = {}
    rows = []
    for t in tasks:
        if t.network_id not in written:
            p = network_dir / f"{t.network_id}.json"
            p.write_text(t.network.to_json())
            written[t.network_id] = p.name
        rows.append({
            "task_id": t.task_id,
            "network_id": t.network_id,
            "network": os.path.relpath(network_dir / written[t.network_id],
                                       manifest_path.parent),
            "tilts": list(t.initial_tilts),
            "seed": t.seed,
        })
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps({"version": 1, "tasks": rows}, indent=1))


def load_tasks(manifest_path) -> list[CCOTask]:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    cache: dict[str, NetworkState] = {}
    tasks = []
    for row in doc["tasks"]:
        p = Path(row["network"])
        if not p.is_absolute():
            p = manifest_path.parent / p
        key = str(p)
        if key not in cache:
            cache[key] = NetworkState.load(p)
        tasks.append(CCOTask(row["task_id"], cache[key], tuple(row["tilts"]),
                             int(row["seed"]), row["network_id"]))
    return tasks
