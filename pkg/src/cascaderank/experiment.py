"""Experiment harness: seeded run matrices, regret traces, aggregation, plots.

A run simulates one (policy, mix, list size, topic count, user, repeat)
cell for n steps against the greedy benchmark and records cumulative
expected regret on a fixed logging grid.  Runs are independently seeded
from (master_seed, user, repeat) so every policy faces the same click
randomness, outputs are flushed per run, and aggregation is a separate
deterministic pass, which keeps results byte-identical regardless of
worker scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import environment, oracle, pipeline
from .policy import POLICY_NAMES, Policy, theoretical_gamma

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("policy", "lambda", "K", "d", "user", "repeat", "step", "cum_regret", "clicks", "clamps")
SUMMARY_COLUMNS = ("policy", "lambda", "K", "d", "step", "n_runs", "mean_cum_regret", "stderr_cum_regret")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one experiment matrix."""

    source: str                      # "bundle" or "synthetic"
    bundle_dir: str | None = None
    synth_seed: int = 0
    synth_items: int = 200
    synth_topics: int = 10
    synth_rel_dim: int = 10
    synth_users: int = 100
    synth_sparsity: float = 0.12
    policies: tuple = POLICY_NAMES
    lambdas: tuple = (0.5,)
    k_values: tuple = (10,)
    d_values: tuple = ()             # empty: use the bundle's full topic set
    n_steps: int = 20000
    users: int = 25
    repeats: int = 2
    gamma: float | str = 1.0
    master_seed: int = 1
    log_stride: int = 50

    def __post_init__(self):
        if self.source not in ("bundle", "synthetic"):
            raise ValueError(f"source must be 'bundle' or 'synthetic', got {self.source!r}")
        if self.source == "bundle" and not self.bundle_dir:
            raise ValueError("source 'bundle' needs bundle_dir")
        for name in self.policies:
            if name not in POLICY_NAMES:
                raise ValueError(f"unknown policy {name!r}, expected one of {POLICY_NAMES}")
        if not self.policies or not self.lambdas or not self.k_values:
            raise ValueError("policies, lambdas and k_values must be nonempty")
        for lam in self.lambdas:
            if not 0.0 <= lam <= 1.0:
                raise ValueError(f"lambda {lam} outside [0, 1]")
        if self.n_steps < 1 or self.users < 1 or self.repeats < 1:
            raise ValueError("n_steps, users and repeats must all be >= 1")
        if self.log_stride < 1 or self.n_steps % self.log_stride != 0:
            raise ValueError(f"log_stride {self.log_stride} must divide n_steps {self.n_steps}")
        if isinstance(self.gamma, str):
            if self.gamma != "theoretical":
                raise ValueError(f"gamma must be a positive number or 'theoretical', got {self.gamma!r}")
        elif not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.to_mapping(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def to_mapping(self) -> dict:
        out = {
            "source": self.source,
            "policies": list(self.policies),
            "lambdas": list(self.lambdas),
            "k_values": list(self.k_values),
            "d_values": list(self.d_values),
            "n_steps": self.n_steps,
            "users": self.users,
            "repeats": self.repeats,
            "gamma": self.gamma,
            "master_seed": self.master_seed,
            "log_stride": self.log_stride,
        }
        if self.source == "bundle":
            out["bundle_dir"] = self.bundle_dir
        else:
            out.update(
                synth_seed=self.synth_seed,
                synth_items=self.synth_items,
                synth_topics=self.synth_topics,
                synth_rel_dim=self.synth_rel_dim,
                synth_users=self.synth_users,
                synth_sparsity=self.synth_sparsity,
            )
        return out

    def to_text(self) -> str:
        """Render in the flat key = value config format."""
        lines = []
        for key, value in self.to_mapping().items():
            if isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_LIST_KEYS = {"policies", "lambdas", "k_values", "d_values"}
_INT_KEYS = {
    "n_steps", "users", "repeats", "master_seed", "log_stride",
    "synth_seed", "synth_items", "synth_topics", "synth_rel_dim", "synth_users",
}
_FLOAT_KEYS = {"synth_sparsity"}


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse the flat config grammar: `key = value` lines, `#` comments,
    comma-separated lists."""
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        raw[key] = value
    return config_from_mapping(raw)


def config_from_mapping(raw: dict) -> ExperimentConfig:
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict = {}
    for key, value in raw.items():
        if isinstance(value, str):
            if key in _LIST_KEYS:
                parts = [p.strip() for p in value.split(",") if p.strip()]
                if key == "policies":
                    kwargs[key] = tuple(parts)
                elif key == "lambdas":
                    kwargs[key] = tuple(float(p) for p in parts)
                else:
                    kwargs[key] = tuple(int(p) for p in parts)
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key == "gamma":
                kwargs[key] = value if value == "theoretical" else float(value)
            else:
                kwargs[key] = value
        elif key in _LIST_KEYS and isinstance(value, (list, tuple)):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RegretTrace:
    """Cumulative expected regret of one run, sampled on the logging grid."""

    policy: str
    lam: float
    k: int
    d: int
    user: int
    repeat: int
    steps: np.ndarray
    cum_regret: np.ndarray
    cum_clicks: np.ndarray
    cum_clamps: np.ndarray

    @property
    def key(self):
        return (self.policy, self.lam, self.k, self.d, self.user, self.repeat)

    def final_regret(self) -> float:
        return float(self.cum_regret[-1])


def run_seed(master_seed: int, user: int, repeat: int) -> np.random.SeedSequence:
    """Every run draws from hash(master_seed, user, repeat): all policies in a
    cell face the same click randomness."""
    return np.random.SeedSequence([int(master_seed), int(user), int(repeat)])


def simulate_run(
    bundle: pipeline.InstanceBundle,
    policy_name: str,
    lam: float,
    k: int,
    user_index: int,
    repeat: int,
    n_steps: int,
    log_stride: int,
    gamma,
    master_seed: int,
) -> RegretTrace:
    """Simulate one cell entry and sample its cumulative regret trace."""
    catalog = bundle.catalog
    user = bundle.user(user_index, lam)
    rng = np.random.default_rng(run_seed(master_seed, user_index, repeat))
    if gamma == "theoretical":
        gamma_value = theoretical_gamma(catalog.m, catalog.d, n_steps, k, 1.0)
    else:
        gamma_value = float(gamma)
    policy = Policy.create(policy_name, catalog, gamma=gamma_value)
    bench = oracle.greedy_benchmark(user, catalog, k)
    bench_reward = oracle.list_reward(user, catalog, bench)

    n_logs = n_steps // log_stride
    steps = np.arange(1, n_logs + 1, dtype=np.int64) * log_stride
    cum_regret = np.empty(n_logs)
    cum_clicks = np.empty(n_logs, dtype=np.int64)
    cum_clamps = np.empty(n_logs, dtype=np.int64)
    regret = 0.0
    clicks = 0
    clamps = 0
    row = 0
    for t in range(1, n_steps + 1):
        outcome = environment.run_step(policy, user, catalog, k, rng)
        regret += bench_reward - outcome.expected_reward
        clicks += 1 if outcome.feedback.click_pos <= k else 0
        clamps += outcome.clamp_count
        if t % log_stride == 0:
            cum_regret[row] = regret
            cum_clicks[row] = clicks
            cum_clamps[row] = clamps
            row += 1
    return RegretTrace(policy_name, float(lam), int(k), catalog.d, user_index, repeat, steps, cum_regret, cum_clicks, cum_clamps)


def _load_instance(config: ExperimentConfig) -> pipeline.InstanceBundle:
    if config.source == "bundle":
        return pipeline.load_bundle(config.bundle_dir)
    return pipeline.synthesize_instance(
        seed=config.synth_seed,
        n_items=config.synth_items,
        n_topics=config.synth_topics,
        rel_dim=config.synth_rel_dim,
        sparsity=config.synth_sparsity,
        n_users=config.synth_users,
    )


def _expand_tasks(config: ExperimentConfig, bundle: pipeline.InstanceBundle):
    d_values = tuple(config.d_values) or (bundle.catalog.d,)
    if config.users > bundle.n_users:
        raise ValueError(f"config asks for {config.users} users, bundle has {bundle.n_users}")
    tasks = []
    for d in d_values:
        for k in config.k_values:
            if k > len(bundle.catalog):
                raise ValueError(f"K={k} exceeds catalog size {len(bundle.catalog)}")
            for lam in config.lambdas:
                for policy_name in config.policies:
                    for user in range(config.users):
                        for repeat in range(config.repeats):
                            tasks.append((policy_name, lam, k, d, user, repeat))
    return d_values, tasks


_WORKER_STATE: dict = {}


def _worker_init(config_mapping: dict):
    config = config_from_mapping(config_mapping)
    bundle = _load_instance(config)
    _WORKER_STATE["config"] = config
    _WORKER_STATE["views"] = _topic_views(config, bundle)


def _topic_views(config: ExperimentConfig, bundle: pipeline.InstanceBundle) -> dict:
    views = {}
    for d in tuple(config.d_values) or (bundle.catalog.d,):
        views[d] = pipeline.restrict_topics(bundle, d) if d != bundle.catalog.d else bundle
    return views


def _worker_run(task) -> RegretTrace:
    policy_name, lam, k, d, user, repeat = task
    config = _WORKER_STATE["config"]
    view = _WORKER_STATE["views"][d]
    return simulate_run(
        view, policy_name, lam, k, user, repeat,
        config.n_steps, config.log_stride, config.gamma, config.master_seed,
    )


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1, progress: bool = False):
    """Run the whole matrix; returns traces sorted by run key.

    With `out_dir` set, every finished run is flushed immediately to
    out_dir/runs/ and the merged traces.csv is rewritten at the end, so an
    interruption loses at most the run in flight.
    """
    bundle = _load_instance(config)
    d_values, tasks = _expand_tasks(config, bundle)
    views = _topic_views(config, bundle)
    for d in d_values:
        if config.users > views[d].n_users:
            raise ValueError(f"topic restriction to d={d} leaves {views[d].n_users} users, config needs {config.users}")

    runs_dir = None
    if out_dir is not None:
        runs_dir = Path(out_dir) / "runs"
        runs_dir.mkdir(parents=True, exist_ok=True)

    traces = []
    if jobs <= 1:
        for i, task in enumerate(tasks):
            policy_name, lam, k, d, user, repeat = task
            trace = simulate_run(
                views[d], policy_name, lam, k, user, repeat,
                config.n_steps, config.log_stride, config.gamma, config.master_seed,
            )
            traces.append(trace)
            if runs_dir is not None:
                _flush_run(runs_dir, trace)
            if progress:
                logger.info("run %d/%d done: %s", i + 1, len(tasks), trace.key)
    else:
        ctx = get_context("spawn")
        with ctx.Pool(jobs, initializer=_worker_init, initargs=(config.to_mapping(),)) as pool:
            for i, trace in enumerate(pool.imap_unordered(_worker_run, tasks, chunksize=1)):
                traces.append(trace)
                if runs_dir is not None:
                    _flush_run(runs_dir, trace)
                if progress:
                    logger.info("run %d/%d done: %s", i + 1, len(tasks), trace.key)

    traces.sort(key=lambda tr: tr.key)
    if out_dir is not None:
        write_traces_csv(traces, Path(out_dir) / "traces.csv")
        (Path(out_dir) / "config.txt").write_text(config.to_text(), encoding="utf-8")
    return traces


def _run_filename(trace: RegretTrace) -> str:
    lam = format(trace.lam, ".6g")
    return f"{trace.policy}_lam{lam}_K{trace.k}_d{trace.d}_u{trace.user}_r{trace.repeat}.csv"


def _flush_run(runs_dir: Path, trace: RegretTrace) -> None:
    path = runs_dir / _run_filename(trace)
    tmp = path.with_suffix(".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(_trace_rows(trace))
    tmp.replace(path)


def _trace_rows(trace: RegretTrace):
    for i in range(trace.steps.size):
        yield (
            trace.policy,
            format(trace.lam, ".6g"),
            trace.k,
            trace.d,
            trace.user,
            trace.repeat,
            int(trace.steps[i]),
            format(float(trace.cum_regret[i]), ".10g"),
            int(trace.cum_clicks[i]),
            int(trace.cum_clamps[i]),
        )


def write_traces_csv(traces, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        for trace in sorted(traces, key=lambda tr: tr.key):
            writer.writerows(_trace_rows(trace))


def read_traces_csv(path):
    """Rebuild RegretTrace objects from a traces.csv (or a runs/ directory)."""
    src = Path(path)
    if src.is_dir():
        rows = []
        for part in sorted(src.glob("*.csv")):
            rows.extend(_read_rows(part))
    else:
        rows = _read_rows(src)
    grouped: dict = {}
    for row in rows:
        key = (row["policy"], float(row["lambda"]), int(row["K"]), int(row["d"]), int(row["user"]), int(row["repeat"]))
        grouped.setdefault(key, []).append(row)
    traces = []
    for key, entries in sorted(grouped.items()):
        entries.sort(key=lambda r: int(r["step"]))
        traces.append(
            RegretTrace(
                policy=key[0], lam=key[1], k=key[2], d=key[3], user=key[4], repeat=key[5],
                steps=np.array([int(r["step"]) for r in entries], dtype=np.int64),
                cum_regret=np.array([float(r["cum_regret"]) for r in entries]),
                cum_clicks=np.array([int(r["clicks"]) for r in entries], dtype=np.int64),
                cum_clamps=np.array([int(r["clamps"]) for r in entries], dtype=np.int64),
            )
        )
    return traces


def _read_rows(path):
    with Path(path).open("r", newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = set(TRACE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing trace columns {sorted(missing)}")
        return list(reader)


@dataclass(frozen=True)
class SummaryRow:
    policy: str
    lam: float
    k: int
    d: int
    step: int
    n_runs: int
    mean_cum_regret: float
    stderr_cum_regret: float | None   # absent (not zero) for single-run cells


def aggregate(traces) -> list:
    """Mean and standard error of cumulative regret per cell per logged step."""
    cells: dict = {}
    for trace in traces:
        cell = (trace.policy, trace.lam, trace.k, trace.d)
        cells.setdefault(cell, []).append(trace)
    rows = []
    for cell in sorted(cells):
        group = cells[cell]
        steps = group[0].steps
        for trace in group[1:]:
            if not np.array_equal(trace.steps, steps):
                raise ValueError(f"cell {cell}: traces disagree on the logging grid")
        stacked = np.vstack([trace.cum_regret for trace in group])
        means = stacked.mean(axis=0)
        if stacked.shape[0] >= 2:
            stderr = stacked.std(axis=0, ddof=1) / math.sqrt(stacked.shape[0])
        else:
            stderr = None
        for i, step in enumerate(steps):
            rows.append(
                SummaryRow(
                    policy=cell[0], lam=cell[1], k=cell[2], d=cell[3],
                    step=int(step), n_runs=stacked.shape[0],
                    mean_cum_regret=float(means[i]),
                    stderr_cum_regret=None if stderr is None else float(stderr[i]),
                )
            )
    return rows


def write_summary_csv(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                (
                    row.policy,
                    format(row.lam, ".6g"),
                    row.k,
                    row.d,
                    row.step,
                    row.n_runs,
                    format(row.mean_cum_regret, ".10g"),
                    "" if row.stderr_cum_regret is None else format(row.stderr_cum_regret, ".10g"),
                )
            )


def read_summary_csv(path) -> list:
    rows = []
    with Path(path).open("r", newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        for rec in reader:
            rows.append(
                SummaryRow(
                    policy=rec["policy"],
                    lam=float(rec["lambda"]),
                    k=int(rec["K"]),
                    d=int(rec["d"]),
                    step=int(rec["step"]),
                    n_runs=int(rec["n_runs"]),
                    mean_cum_regret=float(rec["mean_cum_regret"]),
                    stderr_cum_regret=float(rec["stderr_cum_regret"]) if rec["stderr_cum_regret"] else None,
                )
            )
    return rows


def render_plots(summary_rows, out_dir) -> list:
    """One SVG of regret curves per (lambda, K, d) cell, plus a final-regret
    sweep over lambda when several mixes were run; deterministic bytes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "cascaderank"

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not summary_rows:
        raise ValueError("summary is empty, nothing to plot")

    cells: dict = {}
    for row in summary_rows:
        cells.setdefault((row.lam, row.k, row.d), {}).setdefault(row.policy, []).append(row)
    written = []

    for (lam, k, d), by_policy in sorted(cells.items()):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for policy_name in sorted(by_policy):
            rows = sorted(by_policy[policy_name], key=lambda r: r.step)
            steps = np.array([r.step for r in rows])
            mean = np.array([r.mean_cum_regret for r in rows])
            ax.plot(steps, mean, label=policy_name, linewidth=1.4)
            if all(r.stderr_cum_regret is not None for r in rows):
                err = np.array([r.stderr_cum_regret for r in rows])
                ax.fill_between(steps, mean - err, mean + err, alpha=0.25, linewidth=0)
        ax.set_xlabel("step")
        ax.set_ylabel("cumulative expected regret")
        ax.set_title(f"relevance mix {lam:g}, K={k}, d={d}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        name = f"regret_lam{lam:g}_K{k}_d{d}.svg"
        fig.savefig(out / name, metadata={"Date": None})
        plt.close(fig)
        written.append(out / name)

    lambdas = sorted({row.lam for row in summary_rows})
    if len(lambdas) > 1:
        for (k, d) in sorted({(row.k, row.d) for row in summary_rows}):
            final_step = max(row.step for row in summary_rows if row.k == k and row.d == d)
            finals: dict = {}
            for row in summary_rows:
                if row.k == k and row.d == d and row.step == final_step:
                    finals.setdefault(row.policy, {})[row.lam] = row
            fig, ax = plt.subplots(figsize=(5.0, 3.6))
            for policy_name in sorted(finals):
                pts = [finals[policy_name].get(lam) for lam in lambdas]
                xs = [lam for lam, p in zip(lambdas, pts) if p is not None]
                ys = [p.mean_cum_regret for p in pts if p is not None]
                errs = [p.stderr_cum_regret or 0.0 for p in pts if p is not None]
                ax.errorbar(xs, ys, yerr=errs, label=policy_name, marker="o", markersize=3, linewidth=1.2, capsize=2)
            ax.set_xlabel("relevance mix")
            ax.set_ylabel(f"cumulative regret at step {final_step}")
            ax.set_title(f"final regret vs mix, K={k}, d={d}")
            ax.legend(fontsize=8)
            fig.tight_layout()
            name = f"final_regret_vs_lambda_K{k}_d{d}.svg"
            fig.savefig(out / name, metadata={"Date": None})
            plt.close(fig)
            written.append(out / name)
    return written
