"""Command-line surface tying train -> convert -> eval -> compare into
reproducible runs.

Exit codes: 2 invalid config / missing inputs, 3 training divergence,
4 non-convertible source network, 5 checksum failure, 6 incompatible
comparison inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evalharness, mlp, ppo, sdnn, selfcheck, weightsio
from .mathcore import SeededRng

EXIT_BAD_INPUT = 2
EXIT_DIVERGED = 3
EXIT_NOT_CONVERTIBLE = 4
EXIT_CHECKSUM = 5
EXIT_INCOMPATIBLE = 6

OUT_ROOT_ENV = "SDFLYER_OUT"


class CliError(SystemExit):
    def __init__(self, code: int, message: str):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(code)


def _out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs")) / command


def _load_config(path: str | None) -> weightsio.RunConfig:
    if path is None:
        return weightsio.RunConfig()
    try:
        return weightsio.load_config(path)
    except weightsio.ConfigError as exc:
        raise CliError(EXIT_BAD_INPUT, str(exc))


def _load_actor(path: str):
    try:
        return weightsio.load_actor(path)
    except weightsio.WeightFileError as exc:
        code = {
            "checksum": EXIT_CHECKSUM,
            "integrity": EXIT_CHECKSUM,
            "activation": EXIT_NOT_CONVERTIBLE,
        }.get(exc.reason, EXIT_BAD_INPUT)
        raise CliError(code, str(exc))


def _load_sdnn(path: str, mode: str | None):
    try:
        return weightsio.load_sdnn(path, mode=mode)
    except weightsio.WeightFileError as exc:
        code = {"checksum": EXIT_CHECKSUM, "integrity": EXIT_CHECKSUM}.get(
            exc.reason, EXIT_BAD_INPUT
        )
        raise CliError(code, str(exc))


def _parse_seeds(text: str) -> list[int]:
    """Either a count ("10" -> seeds 0..9) or an explicit list ("0,3,7")."""
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip() != ""]
        return list(range(int(text)))
    except ValueError:
        raise CliError(EXIT_BAD_INPUT, f"cannot parse seed list {text!r}")


def _tasks_from(arg: str) -> list[str]:
    if arg == "both":
        return ["undock", "random"]
    return [arg]


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out = _out_dir(args, "train")
    out.mkdir(parents=True, exist_ok=True)

    def progress(row: ppo.IterationLog) -> None:
        if row.iteration % 10 == 0 or row.iteration == 1:
            print(
                f"iter {row.iteration:4d}  mean_return {row.mean_return:9.2f}  "
                f"final_pos {row.final_pos_err:7.4f} m  final_ang {row.final_ang_err_deg:6.2f} deg",
                flush=True,
            )

    try:
        result = ppo.train(
            config.ppo,
            config.env,
            SeededRng(config.seed),
            reward_weights=config.reward,
            progress=progress if not args.quiet else None,
        )
    except ppo.TrainingDiverged as exc:
        raise CliError(EXIT_DIVERGED, f"training diverged: {exc}")

    weightsio.save_actor(out / "actor.json", result.actor, result.head)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["iteration", "mean_return", "final_pos_err_m", "final_ang_err_deg", "policy_loss", "value_loss"]
    )
    for row in result.log:
        writer.writerow(
            [
                row.iteration,
                repr(row.mean_return),
                repr(row.final_pos_err),
                repr(row.final_ang_err_deg),
                repr(row.policy_loss),
                repr(row.value_loss),
            ]
        )
    weightsio.atomic_write_text(out / "train_log.csv", buf.getvalue())
    weightsio.write_resolved_config(out, config)
    print(f"wrote {out / 'actor.json'}")
    return 0


# -- convert --------------------------------------------------------------------


def cmd_convert(args) -> int:
    config = _load_config(args.config)
    actor, _head = _load_actor(args.weights)
    out = _out_dir(args, "convert")
    out.mkdir(parents=True, exist_ok=True)

    calib = evalharness.collect_observations(
        evalharness.AnnController(actor),
        tasks=list(config.tasks),
        seeds=list(config.seeds),
        params=config.env,
    )
    threshold = config.threshold if args.threshold is None else args.threshold
    try:
        net = sdnn.convert(
            actor,
            thresholds=threshold,
            quant=config.quant,
            calibration_inputs=calib,
            mode=args.mode,
        )
    except sdnn.ConversionError as exc:
        raise CliError(EXIT_NOT_CONVERTIBLE, str(exc))
    weightsio.save_sdnn(out / "sdnn.json", net)

    # Equivalence check: a zero-threshold float twin must reproduce the ANN.
    twin = sdnn.reconfigure(net, thresholds=0.0, mode="float")
    rng = SeededRng(0)
    stream = calib[rng.integers(0, len(calib), 64)] if len(calib) else rng.normal((64, 12))
    worst = 0.0
    for x in stream:
        sd_out = sdnn.sdnn_step(twin, x)
        ann_out, _ = mlp.forward(actor, x)
        worst = max(worst, float(np.abs(sd_out - ann_out).max()))
    quant_err = [
        float(np.abs(w - wq / spec.scale).max())
        for w, wq, spec in zip(net.weights, net.weights_q, net.weight_specs)
    ]
    report = {
        "thresholds": net.thresholds,
        "thresholds_int": net.thresholds_q,
        "mode": net.mode,
        "scales": {
            "observation": net.obs_spec.scale,
            "activations": [s.scale for s in net.act_specs],
            "action": net.action_spec.scale,
            "weights": [s.scale for s in net.weight_specs],
        },
        "max_weight_quantization_error": quant_err,
        "zero_threshold_equivalence": {"max_abs_error": worst, "tolerance": 1e-5, "pass": worst < 1e-5},
        "calibration_observations": int(len(calib)),
    }
    weightsio.atomic_write_text(out / "conversion_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    weightsio.write_resolved_config(out, config)
    print(f"wrote {out / 'sdnn.json'} (zero-threshold equivalence err {worst:.2e})")
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    seeds = _parse_seeds(args.seeds) if args.seeds else list(config.seeds)
    if not seeds:
        raise CliError(EXIT_BAD_INPUT, "seed list must not be empty")
    tasks = _tasks_from(args.task) if args.task else list(config.tasks)

    if args.controller == "ann":
        actor, _ = _load_actor(args.weights)
        controller = evalharness.AnnController(actor)
    else:
        net = _load_sdnn(args.weights, mode=args.mode)
        if args.threshold is not None:
            net = sdnn.reconfigure(net, thresholds=args.threshold)
        controller = evalharness.SdnnController(net, exec_mode=args.exec_mode)

    out = _out_dir(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    traces, report = evalharness.run_eval(controller, tasks, seeds, config.env)
    for trace in traces:
        evalharness.write_trace_csv(out / evalharness.trace_filename(trace), trace)
    weightsio.atomic_write_text(
        out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    for metric, fname in (("pos_err", "position_error.svg"), ("ang_err_deg", "orientation_error.svg")):
        for warning in evalharness.plot_timeseries(traces, metric, out / fname):
            print(f"warning: {warning}", file=sys.stderr)
    manifest = {
        "controller": args.controller,
        "label": controller.label,
        "weights": str(args.weights),
        "tasks": tasks,
        "seeds": seeds,
        "mode": getattr(args, "mode", None),
        "threshold": args.threshold,
        "exec_mode": getattr(args, "exec_mode", None),
    }
    weightsio.atomic_write_text(out / "eval_config.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    weightsio.write_resolved_config(out, config)
    print(f"wrote {len(traces)} traces and {out / 'report.json'}")
    return 0


# -- compare --------------------------------------------------------------------


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise CliError(EXIT_INCOMPATIBLE, "compare needs at least two report files")
    reports = []
    for path in args.reports:
        p = Path(path)
        if not p.exists():
            raise CliError(EXIT_BAD_INPUT, f"report not found: {p}")
        doc = json.loads(p.read_text())
        major = str(doc.get("schema_version", "1.0")).split(".")[0]
        if major != "1" or "tasks" not in doc:
            raise CliError(EXIT_BAD_INPUT, f"{p} is not a supported report file")
        reports.append(doc)
    out = _out_dir(args, "compare")
    out.mkdir(parents=True, exist_ok=True)

    rows: list[dict] = []
    base = reports[0]
    try:
        for other in reports[1:]:
            rows.extend(evalharness.compare(base, other))
    except evalharness.ReportMismatch as exc:
        raise CliError(EXIT_INCOMPATIBLE, str(exc))

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    weightsio.atomic_write_text(out / "comparison.csv", buf.getvalue())
    text = evalharness.comparison_text(rows)
    weightsio.atomic_write_text(out / "comparison.txt", text)

    # Efficiency-proxy scatter data (throughput proxy vs synops analogue).
    sbuf = io.StringIO()
    swriter = csv.writer(sbuf, lineterminator="\n")
    swriter.writerow(
        ["controller", "task", "synops_per_inference", "dense_macs_per_inference", "pipeline_latency", "edp_proxy"]
    )
    for rep in reports:
        for task, entry in sorted(rep["tasks"].items()):
            swriter.writerow(
                [
                    rep["controller"],
                    task,
                    entry.get("synops_per_inference", ""),
                    entry.get("dense_macs_per_inference", ""),
                    entry.get("pipeline_latency", ""),
                    entry.get("edp_proxy", ""),
                ]
            )
    weightsio.atomic_write_text(out / "efficiency_scatter.csv", sbuf.getvalue())
    print(text)
    print(f"wrote {out / 'comparison.csv'}")
    return 0


def cmd_verify(args) -> int:
    ok = selfcheck.run_all()
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdflyer",
        description="Train, convert, and evaluate free-flyer controllers "
        "(floating-point actor vs sigma-delta network).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the actor with PPO")
    p_train.add_argument("--config", help="run config JSON")
    p_train.add_argument("--seed", type=int, help="override training seed")
    p_train.add_argument("--out", help="output directory")
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(fn=cmd_train)

    p_conv = sub.add_parser("convert", help="convert a trained actor to an SDNN")
    p_conv.add_argument("--weights", required=True, help="actor weight file")
    p_conv.add_argument("--config", help="run config JSON")
    p_conv.add_argument("--threshold", type=float, help="delta threshold (real units)")
    p_conv.add_argument("--mode", choices=list(sdnn.MODES), default="quantized")
    p_conv.add_argument("--out", help="output directory")
    p_conv.set_defaults(fn=cmd_convert)

    p_eval = sub.add_parser("eval", help="closed-loop evaluation over tasks and seeds")
    p_eval.add_argument("--controller", choices=["ann", "sdnn"], required=True)
    p_eval.add_argument("--weights", required=True)
    p_eval.add_argument("--task", choices=["undock", "random", "both"])
    p_eval.add_argument("--seeds", help="seed count (N -> 0..N-1) or comma list")
    p_eval.add_argument("--mode", choices=list(sdnn.MODES), help="override stored SDNN mode")
    p_eval.add_argument("--threshold", type=float, help="override stored SDNN thresholds")
    p_eval.add_argument(
        "--exec-mode",
        dest="exec_mode",
        choices=[sdnn.EXEC_FLUSH, sdnn.EXEC_PIPELINED],
        default=sdnn.EXEC_FLUSH,
    )
    p_eval.add_argument("--config", help="run config JSON")
    p_eval.add_argument("--out", help="output directory")
    p_eval.set_defaults(fn=cmd_eval)

    p_cmp = sub.add_parser("compare", help="side-by-side comparison of eval reports")
    p_cmp.add_argument("reports", nargs="+", help="report.json files (first is baseline)")
    p_cmp.add_argument("--out", help="output directory")
    p_cmp.set_defaults(fn=cmd_compare)

    p_ver = sub.add_parser("verify", help="run the built-in invariant suite")
    p_ver.set_defaults(fn=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError:
        raise
    except FileNotFoundError as exc:
        raise CliError(EXIT_BAD_INPUT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
