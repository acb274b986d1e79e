"""Closed-loop experiment runner: undock and random maneuvers over seed
lists, Table-style accuracy aggregates, efficiency proxies, comparisons, and
time-series plots.

Episode traces record the tracking error after each control step, so the
final row is the end-of-episode error. Aggregates are always recomputed from
traces, never from live state.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import freeflyer, mlp, sdnn
from .freeflyer import FlyerParams
from .mathcore import SeededRng
from .weightsio import atomic_write_text


class AnnController:
    """Greedy (mean) policy of the floating-point actor."""

    kind = "ann"

    def __init__(self, actor: mlp.DenseNet, label: str = "ann"):
        self.actor = actor
        self.label = label
        self.dense_macs_per_step = sum(
            actor.layer_dims[i] * actor.layer_dims[i + 1] for i in range(actor.n_layers)
        )

    def reset(self) -> None:
        pass

    def act(self, obs: np.ndarray) -> np.ndarray:
        out, _ = mlp.forward(self.actor, obs)
        return out

    def step_events(self) -> tuple[int, int, int]:
        return 0, 0, 0


class SdnnController:
    """Converted network, float-reference or quantized, flush or pipelined."""

    kind = "sdnn"

    def __init__(self, net: sdnn.SdnnNet, exec_mode: str = sdnn.EXEC_FLUSH, label: str | None = None):
        self.net = net
        self.exec_mode = exec_mode
        self.label = label or f"sdnn-{net.mode}"
        self.dense_macs_per_step = net.dense_macs_per_step

    def reset(self) -> None:
        sdnn.reset_states(self.net)

    def act(self, obs: np.ndarray) -> np.ndarray:
        return sdnn.sdnn_step(self.net, obs, self.exec_mode)

    def step_events(self) -> tuple[int, int, int]:
        c = self.net.counters
        return c.last_step_messages, c.last_step_synops, c.last_step_overflows


@dataclass
class EpisodeTrace:
    controller: str
    task: str
    seed: int
    pos_err: np.ndarray            # (T,) error norm after each step [m]
    ang_err_deg: np.ndarray        # (T,) total rotation error [deg]
    pos_err_axes: np.ndarray       # (T, 3) signed per-axis position error [m]
    ang_err_axes_deg: np.ndarray   # (T, 3) error rotation vector [deg]
    actions: np.ndarray            # (T, 6) applied force [N] and torque [N*m]
    spikes: np.ndarray             # (T,) messages emitted (0 for ANN)
    synops: np.ndarray             # (T,) event-driven MACs (0 for ANN)
    overflows: np.ndarray          # (T,) integer saturation events (0 for ANN)

    @property
    def n_steps(self) -> int:
        return int(self.pos_err.size)


def run_episode(
    controller, task: str, seed: int, params: FlyerParams = FlyerParams()
) -> EpisodeTrace:
    """Run one closed-loop episode: observe -> controller -> clamp -> step,
    for the full fixed horizon."""
    rng = SeededRng(seed)
    state, goal = freeflyer.reset(rng, task)
    controller.reset()
    n = params.episode_len
    pos_err = np.empty(n)
    ang_err = np.empty(n)
    pos_axes = np.empty((n, 3))
    ang_axes = np.empty((n, 3))
    actions = np.empty((n, 6))
    spikes = np.zeros(n, dtype=np.int64)
    synops = np.zeros(n, dtype=np.int64)
    overflows = np.zeros(n, dtype=np.int64)
    for t in range(n):
        obs = freeflyer.observe(state, goal)
        raw = controller.act(obs)
        action = freeflyer.action_from_raw(raw, params)
        try:
            state = freeflyer.step(state, action, params)
        except freeflyer.SimulationFault as exc:
            raise freeflyer.SimulationFault(f"step {t}: {exc}") from exc
        after = freeflyer.observe(state, goal)
        pos_axes[t] = after[6:9]
        ang_axes[t] = np.degrees(after[9:12])
        pos_err[t] = np.linalg.norm(after[6:9])
        ang_err[t] = np.degrees(np.linalg.norm(after[9:12]))
        actions[t] = np.concatenate([action.force, action.torque])
        spikes[t], synops[t], overflows[t] = controller.step_events()
    return EpisodeTrace(
        controller.label, task, seed, pos_err, ang_err, pos_axes, ang_axes, actions,
        spikes, synops, overflows,
    )


def collect_observations(
    controller,
    tasks: list[str],
    seeds: list[int],
    params: FlyerParams = FlyerParams(),
) -> np.ndarray:
    """Observations visited by the controller closed-loop over the given
    episodes; used to calibrate quantization scales."""
    collected = []
    for task in tasks:
        for seed in seeds:
            rng = SeededRng(seed)
            state, goal = freeflyer.reset(rng, task)
            controller.reset()
            for _ in range(params.episode_len):
                obs = freeflyer.observe(state, goal)
                collected.append(obs)
                action = freeflyer.action_from_raw(controller.act(obs), params)
                state = freeflyer.step(state, action, params)
    return np.asarray(collected)


# -- metrics -----------------------------------------------------------------


def rmse_position(trace: EpisodeTrace) -> float:
    """Root-mean-square over steps of the position error norm [m]."""
    return float(np.sqrt(np.mean(trace.pos_err**2)))


def rmse_orientation(trace: EpisodeTrace) -> float:
    """Root-mean-square over steps of the total rotation error [deg]."""
    return float(np.sqrt(np.mean(trace.ang_err_deg**2)))


def rmse_position_per_axis(trace: EpisodeTrace) -> float:
    """Per-axis RMSE averaged across the three axes [m]."""
    return float(np.mean(np.sqrt(np.mean(trace.pos_err_axes**2, axis=0))))


def rmse_orientation_per_axis(trace: EpisodeTrace) -> float:
    """Per-axis RMSE of the error rotation vector, averaged across axes [deg]."""
    return float(np.mean(np.sqrt(np.mean(trace.ang_err_axes_deg**2, axis=0))))


def final_position(trace: EpisodeTrace) -> float:
    return float(trace.pos_err[-1])


def final_orientation(trace: EpisodeTrace) -> float:
    return float(trace.ang_err_deg[-1])


ACCURACY_METRICS = {
    "rmse_position": rmse_position,
    "final_position": final_position,
    "rmse_orientation": rmse_orientation,
    "final_orientation": final_orientation,
    "rmse_position_per_axis": rmse_position_per_axis,
    "rmse_orientation_per_axis": rmse_orientation_per_axis,
}


def _mean_sd(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(np.mean(arr)), "sd": sd}


def build_report(
    traces: list[EpisodeTrace],
    controller,
    extra: dict | None = None,
) -> dict:
    """Aggregate traces into a report: accuracy mean +- SD over seeds per
    task, plus the efficiency proxies standing in for hardware energy."""
    if not traces:
        raise ValueError("cannot build a report from zero traces")
    label = traces[0].controller
    tasks: dict[str, dict] = {}
    for task in sorted({t.task for t in traces}):
        group = sorted([t for t in traces if t.task == task], key=lambda t: t.seed)
        seeds = [t.seed for t in group]
        steps = sum(t.n_steps for t in group)
        metrics = {
            name: _mean_sd([fn(t) for t in group]) for name, fn in ACCURACY_METRICS.items()
        }
        total_synops = int(sum(int(t.synops.sum()) for t in group))
        total_spikes = int(sum(int(t.spikes.sum()) for t in group))
        entry = {
            "seeds": seeds,
            "n_steps": group[0].n_steps,
            "metrics": metrics,
            "dense_macs_per_inference": float(controller.dense_macs_per_step),
        }
        if controller.kind == "sdnn":
            net = controller.net
            emit_slots = sum(net.layer_dims[:-1])  # components that can spike
            entry.update(
                {
                    "synops_per_inference": total_synops / steps,
                    "messages_per_inference": total_spikes / steps,
                    "message_density": total_spikes / (steps * emit_slots),
                    "overflows": int(sum(int(t.overflows.sum()) for t in group)),
                    "pipeline_latency": sdnn.pipeline_latency(net),
                    "edp_proxy": total_synops / steps * sdnn.pipeline_latency(net),
                }
            )
        tasks[task] = entry
    report = {
        "schema_version": "1.0",
        "controller": label,
        "kind": controller.kind,
        "tasks": tasks,
    }
    if extra:
        report.update(extra)
    return report


def run_eval(
    controller,
    tasks: list[str],
    seeds: list[int],
    params: FlyerParams = FlyerParams(),
) -> tuple[list[EpisodeTrace], dict]:
    """Protocol runner: every (task, seed) pair once, aggregates from traces."""
    if not seeds:
        raise ValueError("seed list must not be empty")
    traces = [run_episode(controller, task, seed, params) for task in tasks for seed in seeds]
    return traces, build_report(traces, controller)


# -- comparison --------------------------------------------------------------


class ReportMismatch(ValueError):
    """Reports cannot be compared (different tasks or seed lists)."""


def compare(report_a: dict, report_b: dict) -> list[dict]:
    """Side-by-side mean +- SD rows with deltas (b - a) and efficiency ratios."""
    tasks_a, tasks_b = report_a["tasks"], report_b["tasks"]
    if sorted(tasks_a) != sorted(tasks_b):
        raise ReportMismatch(f"task sets differ: {sorted(tasks_a)} vs {sorted(tasks_b)}")
    rows = []
    for task in sorted(tasks_a):
        ta, tb = tasks_a[task], tasks_b[task]
        if ta["seeds"] != tb["seeds"]:
            raise ReportMismatch(f"seed lists differ for task {task!r}")
        row: dict = {"task": task, "a": report_a["controller"], "b": report_b["controller"]}
        for name in ACCURACY_METRICS:
            ma, mb = ta["metrics"][name], tb["metrics"][name]
            row[f"{name}_a_mean"] = ma["mean"]
            row[f"{name}_a_sd"] = ma["sd"]
            row[f"{name}_b_mean"] = mb["mean"]
            row[f"{name}_b_sd"] = mb["sd"]
            row[f"{name}_delta"] = mb["mean"] - ma["mean"]
        macs_a = ta["dense_macs_per_inference"]
        synops_b = tb.get("synops_per_inference")
        row["dense_macs_a"] = macs_a
        row["synops_b"] = synops_b
        row["synop_reduction"] = (macs_a / synops_b) if synops_b else None
        row["message_density_b"] = tb.get("message_density")
        rows.append(row)
    return rows


def comparison_text(rows: list[dict]) -> str:
    """Human-readable mean +- SD table, one block per task."""
    out = io.StringIO()
    for row in rows:
        out.write(f"task: {row['task']}   A={row['a']}  B={row['b']}\n")
        header = f"  {'metric':<28}{'A (mean ± SD)':>24}{'B (mean ± SD)':>24}{'delta (B-A)':>16}\n"
        out.write(header)
        for name in ACCURACY_METRICS:
            a = f"{row[f'{name}_a_mean']:.4f} ± {row[f'{name}_a_sd']:.4f}"
            b = f"{row[f'{name}_b_mean']:.4f} ± {row[f'{name}_b_sd']:.4f}"
            out.write(f"  {name:<28}{a:>24}{b:>24}{row[f'{name}_delta']:>16.4f}\n")
        if row["synop_reduction"] is not None:
            out.write(
                f"  {'synops/inference (B)':<28}{row['synops_b']:>24.1f}"
                f"{'dense MACs (A)':>24}{row['dense_macs_a']:>16.1f}\n"
            )
            out.write(f"  {'synop reduction (A/B)':<28}{row['synop_reduction']:>24.2f}\n")
        out.write("\n")
    return out.getvalue()


# -- trace persistence -------------------------------------------------------

TRACE_COLUMNS = (
    ["step", "pos_err_m", "ang_err_deg"]
    + [f"pos_err_{ax}" for ax in "xyz"]
    + [f"ang_err_{ax}_deg" for ax in "xyz"]
    + ["force_x", "force_y", "force_z", "torque_x", "torque_y", "torque_z"]
    + ["spikes", "synops", "overflows"]
)


def trace_filename(trace: EpisodeTrace) -> str:
    return f"{trace.controller}_{trace.task}_{trace.seed}.csv"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace_csv(path: str | Path, trace: EpisodeTrace) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for t in range(trace.n_steps):
        row = (
            [t, _fmt(trace.pos_err[t]), _fmt(trace.ang_err_deg[t])]
            + [_fmt(v) for v in trace.pos_err_axes[t]]
            + [_fmt(v) for v in trace.ang_err_axes_deg[t]]
            + [_fmt(v) for v in trace.actions[t]]
            + [int(trace.spikes[t]), int(trace.synops[t]), int(trace.overflows[t])]
        )
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def read_trace_csv(path: str | Path) -> EpisodeTrace:
    path = Path(path)
    controller, task, seed = path.stem.rsplit("_", 2)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_COLUMNS:
            raise ValueError(f"{path} does not have the expected trace columns")
        rows = list(reader)
    n = len(rows)
    trace = EpisodeTrace(
        controller=controller,
        task=task,
        seed=int(seed),
        pos_err=np.array([float(r["pos_err_m"]) for r in rows]),
        ang_err_deg=np.array([float(r["ang_err_deg"]) for r in rows]),
        pos_err_axes=np.array([[float(r[f"pos_err_{ax}"]) for ax in "xyz"] for r in rows]),
        ang_err_axes_deg=np.array(
            [[float(r[f"ang_err_{ax}_deg"]) for ax in "xyz"] for r in rows]
        ),
        actions=np.array(
            [
                [float(r[c]) for c in ("force_x", "force_y", "force_z", "torque_x", "torque_y", "torque_z")]
                for r in rows
            ]
        ),
        spikes=np.array([int(r["spikes"]) for r in rows], dtype=np.int64),
        synops=np.array([int(r["synops"]) for r in rows], dtype=np.int64),
        overflows=np.array([int(r["overflows"]) for r in rows], dtype=np.int64),
    )
    assert trace.n_steps == n
    return trace


# -- plotting ----------------------------------------------------------------


def ci_halfwidth(series: np.ndarray, confidence: float = 0.95) -> np.ndarray:
    """Half-width of the t-distribution confidence interval of the mean over
    the leading (seed) axis: t_{alpha/2, n-1} * sd / sqrt(n)."""
    from scipy import stats

    n = series.shape[0]
    if n < 2:
        raise ValueError("confidence interval needs at least two seeds")
    sd = series.std(axis=0, ddof=1)
    return stats.t.ppf(0.5 + confidence / 2.0, n - 1) * sd / np.sqrt(n)


def plot_timeseries(
    traces: list[EpisodeTrace],
    metric: str,
    path: str | Path,
    confidence: float = 0.95,
) -> list[str]:
    """Mean line with a t-distribution confidence band over seeds, one curve
    per (controller, task) group, written as SVG. Returns warnings."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "sdflyer"  # deterministic SVG ids
    import matplotlib.pyplot as plt

    if metric not in ("pos_err", "ang_err_deg"):
        raise ValueError("metric must be 'pos_err' or 'ang_err_deg'")
    ylabel = "position error [m]" if metric == "pos_err" else "orientation error [deg]"
    warnings: list[str] = []
    groups: dict[tuple[str, str], list[EpisodeTrace]] = {}
    for t in traces:
        groups.setdefault((t.controller, t.task), []).append(t)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (controller, task), group in sorted(groups.items()):
        series = np.stack([getattr(t, metric) for t in sorted(group, key=lambda t: t.seed)])
        mean = series.mean(axis=0)
        steps = np.arange(1, mean.size + 1)
        (line,) = ax.plot(steps, mean, label=f"{controller} {task}")
        if series.shape[0] >= 2:
            half = ci_halfwidth(series, confidence)
            ax.fill_between(steps, mean - half, mean + half, alpha=0.25, color=line.get_color())
        else:
            warnings.append(f"{controller}/{task}: single seed, plotting line without CI band")
    ax.set_xlabel("simulation step")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return warnings
