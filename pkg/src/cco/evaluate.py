"""One-shot evaluation, the two aggregate metrics, and report emission."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .context import TaskContext
from .graphdistill import ChannelRegistry
from .neural import PolicyNetwork
from .optimize import SAConfig, sa_optimize
from .reward import RewardWeights
from .scenario import CCOTask

REPORT_VERSION = 1
CSV_COLUMNS = ["task_id", "network_id", "model_variant", "global_reward",
               "coverage_delta", "quality_delta", "n_cells", "n_ues", "k"]


@dataclass
class TaskResult:
    task_id: str
    network_id: str
    model_variant: str
    global_reward: float
    coverage_delta: float
    quality_delta: float
    n_cells: int
    n_ues: int
    k: int


@dataclass
class EvalReport:
    rows: list[TaskResult]
    policy: str = "policy"
    config_digest: str = ""
    checkpoint_digest: str = ""
    source_model: str = ""
    target_model: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.task_id)

    @property
    def avg_global_reward(self) -> float:
        return float(np.mean([r.global_reward for r in self.rows])) if self.rows else float("nan")

    @property
    def ratio_positive_reward(self) -> float:
        if not self.rows:
            return float("nan")
        return float(np.mean([r.global_reward > 0 for r in self.rows]))

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "policy": self.policy,
            "config_digest": self.config_digest,
            "checkpoint_digest": self.checkpoint_digest,
            "source_model": self.source_model,
            "target_model": self.target_model,
            "avg_global_reward": self.avg_global_reward,
            "ratio_positive_reward": self.ratio_positive_reward,
            "n_tasks": len(self.rows),
            "extra": self.extra,
            "rows": [r.__dict__ for r in self.rows],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        if doc.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {doc.get('version')!r}")
        return cls([TaskResult(**r) for r in doc["rows"]], doc["policy"],
                   doc["config_digest"], doc["checkpoint_digest"],
                   doc.get("source_model", ""), doc.get("target_model", ""),
                   doc.get("extra", {}))


def digest_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()[:16]


def digest_file(path) -> str:
    return digest_bytes(Path(path).read_bytes())


def digest_config(doc) -> str:
    return digest_bytes(json.dumps(doc, sort_keys=True).encode())


def network_policy(net: PolicyNetwork) -> Callable[[TaskContext], list[int]]:
    """Greedy (argmax) classes from an eval-mode forward pass."""
    def act(ctx: TaskContext):
        if not ctx.cells:
            return []
        logits, _ = net.forward_batch(ctx.tensors)
        return [int(a) for a in np.argmax(logits, axis=1)]
    return act


def constant_policy(cls: int = 5):
    return lambda ctx: [cls] * len(ctx.cells)


def _row(task: CCOTask, ctx: TaskContext, reward, cov, qual, k) -> TaskResult:
    net = task.network
    return TaskResult(task.task_id, task.network_id, net.propagation.variant,
                      float(reward), float(cov), float(qual), net.n_cells, net.n_ues, k)


def evaluate_one_shot(policy, tasks: Sequence[CCOTask], w: RewardWeights = RewardWeights(),
                      k: int = 10, k_fov: int = 32,
                      registry: ChannelRegistry = ChannelRegistry(),
                      name: str = "policy", contexts: dict | None = None) -> EvalReport:
    """Apply one greedy action per selected cell, once, and score every task.

    ``policy`` is a :class:`PolicyNetwork` or a callable mapping a
    :class:`TaskContext` to one action class per selected cell.
    """
    if not tasks:
        raise ValueError("evaluation needs at least one task")
    if isinstance(policy, PolicyNetwork):
        if policy.input_shape != (k_fov, k_fov, len(registry)):
            raise ValueError(f"network input {policy.input_shape} does not match "
                             f"K_fov={k_fov}, M={len(registry)}")
        policy = network_policy(policy)
    rows = []
    for task in tasks:
        ctx = None if contexts is None else contexts.get(task.task_id)
        if ctx is None:
            ctx = TaskContext(task, k, k_fov, registry, w)
            if contexts is not None:
                contexts[task.task_id] = ctx
        classes = policy(ctx)
        out = ctx.outcome(ctx.action_from_classes(classes))
        rows.append(_row(task, ctx, out.global_reward, out.coverage_delta,
                         out.quality_delta, len(ctx.cells)))
    return EvalReport(rows, name)


def evaluate_sa(tasks: Sequence[CCOTask], cfg: SAConfig = SAConfig(),
                w: RewardWeights = RewardWeights(), seed: int = 0,
                name: str = "SA 10-shot") -> EvalReport:
    """Multi-shot SA baseline scored on the same tasks."""
    if not tasks:
        raise ValueError("evaluation needs at least one task")
    rows = []
    for i, task in enumerate(tasks):
        ctx = TaskContext(task, cfg.top_k, w=w, with_tensors=False)
        res = sa_optimize(task, cfg, w, seed=seed + i, context=ctx)
        out = ctx.outcome(res.action)
        rows.append(_row(task, ctx, out.global_reward, out.coverage_delta,
                         out.quality_delta, len(ctx.cells)))
    return EvalReport(rows, name)


def transfer_eval(policy, tasks: Sequence[CCOTask], w: RewardWeights = RewardWeights(),
                  k: int = 10, k_fov: int = 32, registry: ChannelRegistry = ChannelRegistry(),
                  source_model: str = "ModelA", name: str = "policy") -> EvalReport:
    """Same protocol as :func:`evaluate_one_shot` on target-model tasks, untouched policy."""
    report = evaluate_one_shot(policy, tasks, w, k, k_fov, registry, name)
    report.source_model = source_model
    variants = sorted({t.network.propagation.variant for t in tasks})
    report.target_model = ",".join(variants)
    return report


# -- emission ----------------------------------------------------------------
def write_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for r in report.rows:
            wr.writerow([r.task_id, r.network_id, r.model_variant, repr(r.global_reward),
                         repr(r.coverage_delta), repr(r.quality_delta), r.n_cells, r.n_ues, r.k])


def read_csv(path) -> list[TaskResult]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [TaskResult(r["task_id"], r["network_id"], r["model_variant"],
                       float(r["global_reward"]), float(r["coverage_delta"]),
                       float(r["quality_delta"]), int(r["n_cells"]), int(r["n_ues"]),
                       int(r["k"])) for r in rows]


def write_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))


def read_json(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def render_svg(reports: Sequence[EvalReport]) -> str:
    """Two-panel bar chart: AvgGlobalReward and RatioPositiveReward per policy."""
    width, height = 640, 320
    pad, panel_w = 50, 260
    colors = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             '<rect width="100%" height="100%" fill="white"/>']
    metrics = [("AvgGlobalReward (pp)", [r.avg_global_reward for r in reports]),
               ("RatioPositiveReward", [r.ratio_positive_reward for r in reports])]
    base_y, top_y = height - 60, 40
    for m, (title, values) in enumerate(metrics):
        x0 = pad + m * (panel_w + 40)
        vals = [0.0 if not np.isfinite(v) else v for v in values]
        vmax = max([abs(v) for v in vals] + [1e-9])
        scale = (base_y - top_y) / vmax
        parts.append(f'<text x="{x0 + panel_w / 2}" y="20" text-anchor="middle">'
                     f'{escape(title)}</text>')
        parts.append(f'<line x1="{x0}" y1="{base_y}" x2="{x0 + panel_w}" y2="{base_y}" '
                     f'stroke="black"/>')
        bw = panel_w / max(len(vals), 1)
        for i, (rep, v) in enumerate(zip(reports, vals)):
            h = abs(v) * scale
            y = base_y - h if v >= 0 else base_y
            parts.append(f'<g class="bar-group" data-policy="{escape(rep.policy)}">'
                         f'<rect x="{x0 + i * bw + 4:.1f}" y="{y:.1f}" width="{bw - 8:.1f}" '
                         f'height="{h:.1f}" fill="{colors[i % len(colors)]}"/>'
                         f'<text x="{x0 + i * bw + bw / 2:.1f}" y="{base_y + 14}" '
                         f'text-anchor="middle">{escape(rep.policy)}</text>'
                         f'<text x="{x0 + i * bw + bw / 2:.1f}" y="{y - 4:.1f}" '
                         f'text-anchor="middle">{v:.3g}</text></g>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(report, fmt: str, path) -> Path:
    """Write ``report`` (or a list of reports, for svg) as csv, json or svg."""
    reports = list(report) if isinstance(report, (list, tuple)) else [report]
    for r in reports:
        if not r.rows:
            raise ValueError(f"report {r.policy!r} has no tasks")
    path = Path(path)
    if not path.parent.exists():
        raise OSError(f"cannot write report: directory {path.parent} does not exist")
    if fmt == "csv":
        write_csv(reports[0], path)
    elif fmt == "json":
        write_json(reports[0], path)
    elif fmt == "svg":
        path.write_text(render_svg(reports))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path
