import json

import numpy as np
import pytest

from sdflyer import evalharness, mlp, sdnn
from sdflyer.evalharness import (
    AnnController,
    SdnnController,
    build_report,
    ci_halfwidth,
    compare,
    comparison_text,
    final_orientation,
    final_position,
    plot_timeseries,
    read_trace_csv,
    rmse_orientation,
    rmse_position,
    run_episode,
    run_eval,
    trace_filename,
    write_trace_csv,
)
from sdflyer.freeflyer import FlyerParams
from sdflyer.mathcore import SeededRng

PARAMS = FlyerParams()


class NullController:
    """Does nothing; the flyer never moves."""

    kind = "ann"
    label = "null"
    dense_macs_per_step = 0

    def reset(self):
        pass

    def act(self, obs):
        return np.zeros(6)

    def step_events(self):
        return 0, 0, 0


def small_actor(seed=80):
    rng = SeededRng(seed)
    actor = mlp.init_dense([12, 64, 64, 6], rng, out_gain=0.05)
    return actor


class TestRunEpisode:
    def test_null_controller_undock_final_error(self):
        trace = run_episode(NullController(), "undock", seed=0, params=PARAMS)
        assert trace.n_steps == PARAMS.episode_len
        assert final_position(trace) == 0.5
        assert final_orientation(trace) == 0.0

    def test_same_seed_identical_traces(self):
        actor = small_actor()
        t1 = run_episode(AnnController(actor), "random", seed=3, params=PARAMS)
        t2 = run_episode(AnnController(actor), "random", seed=3, params=PARAMS)
        assert np.array_equal(t1.pos_err, t2.pos_err)
        assert np.array_equal(t1.actions, t2.actions)

    def test_sdnn_records_spikes(self):
        actor = small_actor()
        calib = SeededRng(1).normal((50, 12))
        net = sdnn.convert(actor, thresholds=0.1, calibration_inputs=calib)
        trace = run_episode(SdnnController(net), "undock", seed=0, params=PARAMS)
        assert trace.spikes.sum() > 0
        assert trace.synops.sum() > 0


class TestMetrics:
    def _trace_with(self, pos_err, ang_err=None):
        n = len(pos_err)
        return evalharness.EpisodeTrace(
            controller="x",
            task="undock",
            seed=0,
            pos_err=np.asarray(pos_err, dtype=float),
            ang_err_deg=np.asarray(ang_err if ang_err is not None else pos_err, dtype=float),
            pos_err_axes=np.zeros((n, 3)),
            ang_err_axes_deg=np.zeros((n, 3)),
            actions=np.zeros((n, 6)),
            spikes=np.zeros(n, dtype=np.int64),
            synops=np.zeros(n, dtype=np.int64),
            overflows=np.zeros(n, dtype=np.int64),
        )

    def test_constant_error(self):
        trace = self._trace_with([0.3] * 200)
        assert abs(rmse_position(trace) - 0.3) < 1e-15
        assert abs(rmse_orientation(trace) - 0.3) < 1e-15

    def test_linear_decay_closed_form(self):
        n = 200
        errs = [0.5 * (n - t) / n for t in range(1, n + 1)]
        expected = 0.5 * np.sqrt(sum(((n - t) / n) ** 2 for t in range(1, n + 1)) / n)
        trace = self._trace_with(errs)
        assert abs(rmse_position(trace) - expected) < 1e-12
        assert abs(expected - 0.289) < 2e-3

    def test_zero_error(self):
        trace = self._trace_with([0.0] * 50)
        assert rmse_position(trace) == 0.0


class TestReports:
    def test_report_rebuilds_from_csv_bit_for_bit(self, tmp_path):
        actor = small_actor()
        controller = AnnController(actor)
        traces, live = run_eval(controller, ["undock"], [0, 1, 2], PARAMS)
        reread = []
        for trace in traces:
            path = tmp_path / trace_filename(trace)
            write_trace_csv(path, trace)
            reread.append(read_trace_csv(path))
        rebuilt = build_report(reread, controller)
        assert json.dumps(live, sort_keys=True) == json.dumps(rebuilt, sort_keys=True)

    def test_report_layout(self):
        actor = small_actor()
        traces, report = run_eval(AnnController(actor), ["undock", "random"], [0, 1], PARAMS)
        assert set(report["tasks"]) == {"undock", "random"}
        for entry in report["tasks"].values():
            for name in (
                "rmse_position",
                "final_position",
                "rmse_orientation",
                "final_orientation",
            ):
                assert set(entry["metrics"][name]) == {"mean", "sd"}

    def test_empty_seed_list_rejected(self):
        with pytest.raises(ValueError):
            run_eval(AnnController(small_actor()), ["undock"], [], PARAMS)


class TestCompare:
    def _reports(self):
        actor = small_actor()
        _, report = run_eval(AnnController(actor), ["undock"], [0, 1], PARAMS)
        return report

    def test_self_comparison_zero_deltas(self):
        report = self._reports()
        rows = compare(report, report)
        for row in rows:
            for key, value in row.items():
                if key.endswith("_delta"):
                    assert value == 0.0

    def test_seed_mismatch_refused(self):
        report = self._reports()
        other = json.loads(json.dumps(report))
        other["tasks"]["undock"]["seeds"] = [5, 6]
        with pytest.raises(evalharness.ReportMismatch):
            compare(report, other)

    def test_task_mismatch_refused(self):
        report = self._reports()
        other = json.loads(json.dumps(report))
        other["tasks"]["random"] = other["tasks"].pop("undock")
        with pytest.raises(evalharness.ReportMismatch):
            compare(report, other)

    def test_text_table_renders(self):
        report = self._reports()
        text = comparison_text(compare(report, report))
        assert "rmse_position" in text and "±" in text


class TestPlots:
    def test_ci_halfwidth_scales_with_sd_over_sqrt_n(self):
        from scipy import stats

        rng = SeededRng(81)
        base = rng.normal((4, 50))
        sd = base.std(axis=0, ddof=1)
        half = ci_halfwidth(base, 0.95)
        expected = stats.t.ppf(0.975, 3) * sd / 2.0
        assert np.allclose(half, expected)
        # doubling the spread doubles the width
        assert np.allclose(ci_halfwidth(2.0 * base, 0.95), 2.0 * half)

    def test_identical_traces_zero_width_band(self):
        series = np.tile(np.linspace(1.0, 0.0, 20), (5, 1))
        assert np.all(ci_halfwidth(series) == 0.0)

    def test_plot_writes_svg(self, tmp_path):
        actor = small_actor()
        traces, _ = run_eval(AnnController(actor), ["undock"], [0, 1, 2], PARAMS)
        out = tmp_path / "pos.svg"
        warnings = plot_timeseries(traces, "pos_err", out)
        assert out.exists() and out.read_text().startswith("<?xml")
        assert warnings == []

    def test_single_seed_warns(self, tmp_path):
        actor = small_actor()
        traces, _ = run_eval(AnnController(actor), ["undock"], [0], PARAMS)
        warnings = plot_timeseries(traces, "ang_err_deg", tmp_path / "ang.svg")
        assert len(warnings) == 1 and "single seed" in warnings[0]

    def test_plot_bytes_deterministic(self, tmp_path):
        actor = small_actor()
        traces, _ = run_eval(AnnController(actor), ["undock"], [0, 1], PARAMS)
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        plot_timeseries(traces, "pos_err", a)
        plot_timeseries(traces, "pos_err", b)
        assert a.read_bytes() == b.read_bytes()


class TestTraceFiles:
    def test_filename_scheme(self):
        actor = small_actor()
        trace = run_episode(AnnController(actor, label="ann"), "undock", 7, PARAMS)
        assert trace_filename(trace) == "ann_undock_7.csv"

    def test_csv_round_trip_exact(self, tmp_path):
        actor = small_actor()
        trace = run_episode(AnnController(actor), "random", 2, PARAMS)
        path = tmp_path / trace_filename(trace)
        write_trace_csv(path, trace)
        back = read_trace_csv(path)
        assert np.array_equal(back.pos_err, trace.pos_err)
        assert np.array_equal(back.ang_err_deg, trace.ang_err_deg)
        assert np.array_equal(back.actions, trace.actions)
        assert back.seed == trace.seed and back.task == trace.task
