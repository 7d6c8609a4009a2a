"""Command-line front end.

Subcommands: simulate, serve, analyze, train, eval, bench-noise,
bench-vibration, bench-latency. Exit codes: 0 ok, 1 usage error, 2 data
error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .classify import ModelSpec, TrainedModel, cross_validate, train as train_model
from .dsp import TimeSeries, dominant_frequency, periodogram, psd_from_rms, \
    peak_stats, rms_detrended
from .engine import (Engine, EngineConfig, SessionRunner, ViewSpec, byte_source,
                     render_pre_analysis, replay_log)
from .features import load_dataset
from .metrics import report_json, report_text
from .session import SessionMeta
from .simulate import (SensorConfig, TaskScenario, default_scenario, quantize,
                       synth_task, vibration_scenario)
from .session import task_from_label

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


class DataError(Exception):
    pass


def _load_scenario(args) -> TaskScenario:
    if args.scenario:
        try:
            with open(args.scenario) as fh:
                scenario = TaskScenario.from_json(fh.read())
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load scenario: {exc}") from exc
    else:
        scenario = default_scenario(task_from_label(args.task))
    if args.seed is not None:
        from dataclasses import replace
        scenario = replace(scenario, seed=args.seed)
    return scenario


def _engine_for(scenario, log_path, meta_id="sim") -> tuple[Engine, object]:
    config = EngineConfig()
    meta = SessionMeta(pseudo_id=meta_id, disease="simulated")
    rec = synth_task(scenario, config.sensor)
    stream = quantize(rec, config.sensor)
    engine = Engine(config, meta, log=log_path)
    return engine, stream


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args)
    engine, stream = _engine_for(scenario, args.out)
    margin = round(0.5 * engine.config.sensor.fs)
    n = len(stream)
    started = False
    fed = 0
    for chunk in byte_source(stream, engine.config.chunk_frames):
        engine.feed_bytes(chunk)
        fed = engine.sample_count + len(engine._pending)
        if not started and fed >= margin:
            engine.command("start_task", task=scenario.task.label)
            started = True
        if started and engine.session.open_event is not None and fed >= n - margin:
            engine.command("stop_task")
    if engine.session.open_event is not None:
        engine.command("stop_task")
    engine.finalize()
    print(f"wrote {args.out}: {engine.frame_count} frames, "
          f"events {engine.session.event_strings()}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        engine = replay_log(args.log)
    except Exception as exc:
        raise DataError(f"cannot replay log: {exc}") from exc
    report = engine.pre_analysis()
    print(json.dumps(report, indent=2) if args.json else render_pre_analysis(report))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import EngineServer

    scenario = _load_scenario(args)
    engine, stream = _engine_for(scenario, args.log, meta_id=args.pseudo_id)
    source = byte_source(stream, engine.config.chunk_frames,
                         pace_hz=None if args.fast else engine.config.sensor.fs)
    runner = SessionRunner(engine, source).start()
    server = EngineServer(runner, host=args.host, port=args.port).start()
    print(f"serving on {server.url} (scenario {scenario.task.label}, "
          f"{scenario.duration_s:.0f} s)", flush=True)
    try:
        runner.wait_source_end()
        stats = runner.close()
        print(f"source ended; latency mean {stats.mean_per_sample_ms:.4f} ms/sample")
    except KeyboardInterrupt:
        runner.close()
    finally:
        server.stop()
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        data = load_dataset(args.dataset)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load dataset: {exc}") from exc
    spec = _model_spec(args)
    report = cross_validate(spec, data, k=args.cv, seed=args.seed)
    print(f"{spec.algorithm} {args.cv}-fold CV on {len(data)} rows "
          f"({len(report.labels)} classes): accuracy {report.accuracy:.3f}")
    print(report_text(report.pooled))
    roc_bits = []
    for label in report.labels:
        roc = report.roc(label)
        roc_bits.append(f"{label}: AUC = {roc.auc:.2f}, "
                        f"FPR = {roc.fpr_at_operating_point:.2f}")
    print("ROC curve parameters (pooled CV scores): " + "; ".join(roc_bits))
    model = train_model(spec, data)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(model.to_json())
        print(f"model written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        with open(args.model) as fh:
            model = TrainedModel.from_json(fh.read())
        data = load_dataset(args.dataset)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load model/dataset: {exc}") from exc
    if model.layout_digest and data.layout.digest() != model.layout_digest:
        raise DataError("dataset layout does not match the model's layout hash")
    preds = model.predict(data.X)
    from .metrics import confusion
    cm = confusion(data.y, preds, sorted(set(data.y) | set(model.classes)))
    print(report_json(cm) if args.json else report_text(cm))
    return EXIT_OK


def _model_spec(args) -> ModelSpec:
    kwargs = {}
    if args.algorithm == "knn":
        kwargs = {"n_neighbors": args.k, "metric": args.metric}
    elif args.algorithm == "da":
        kwargs = {"shrinkage": args.shrinkage}
    return ModelSpec(args.algorithm, **kwargs)


def cmd_bench_noise(args) -> int:
    config = SensorConfig()
    from .simulate import gen_noise
    print(f"noise bench: n={args.n}, fs={config.fs}, "
          f"configured PSD {config.accel_noise_psd_ug} ug/rtHz")
    print(f"{'axis':<8}{'RMS (mg)':>10}{'Pk-Pk (mg)':>12}{'PSD (ug/rtHz)':>15}")
    for axis, name in enumerate(("X", "Y", "Z")):
        ns = gen_noise(config, "accel", args.n, seed=args.seed + axis)
        rms = rms_detrended(ns)
        pkpk, _ = peak_stats(ns)
        psd = psd_from_rms(rms * 1000.0, config.noise_bandwidth)
        print(f"{name + ' as Z':<8}{rms:>10.2f}{pkpk:>12.2f}{psd:>15.0f}")
    return EXIT_OK


def cmd_bench_vibration(args) -> int:
    series = vibration_scenario(args.freq, args.pkpk, args.duration, seed=args.seed)
    rms = rms_detrended(series)
    pkpk, abs_peak = peak_stats(series)
    detrended = TimeSeries(series.samples - series.samples.mean(), series.fs)
    dom = dominant_frequency(periodogram(detrended))
    psd_mg = psd_from_rms(rms, series.fs)
    print(f"vibration bench: {args.freq} Hz sine, {args.pkpk} m/s^2 pk-pk, "
          f"{args.duration} s")
    print(f"{'RMS (mg)':>10}{'Pk-Pk (mg)':>12}{'|peak| (mg)':>13}"
          f"{'PSD (mg/rtHz)':>15}{'argmax (Hz)':>13}")
    print(f"{rms:>10.1f}{pkpk:>12.1f}{abs_peak:>13.1f}{psd_mg:>15.2f}{dom:>13.2f}")
    return EXIT_OK


def cmd_bench_latency(args) -> int:
    scenario = default_scenario(task_from_label("PP"), seed=args.seed,
                                duration_s=args.seconds)
    view = ViewSpec("filtered", filter_spec=_default_bandpass()) \
        if args.view == "filtered" else ViewSpec(args.view)
    config = EngineConfig(view=view)
    meta = SessionMeta(pseudo_id="bench")
    rec = synth_task(scenario, config.sensor)
    stream = quantize(rec, config.sensor)
    engine = Engine(config, meta, log=None)
    runner = SessionRunner(engine, byte_source(stream, config.chunk_frames,
                                               pace_hz=config.sensor.fs)).start()
    runner.wait_source_end()
    stats = runner.close()
    doc = stats.to_doc()
    doc["budget_mean_per_sample_ms"] = 0.467
    doc["budget_e2e_p95_ms"] = 160.0
    doc["mean_within_budget"] = stats.mean_per_sample_ms <= 0.467
    doc["e2e_within_budget"] = (stats.e2e_p95_ms or 0.0) < 160.0
    print(json.dumps(doc, indent=2))
    ok = doc["mean_within_budget"] and doc["e2e_within_budget"]
    print("budgets:", "PASS" if ok else "FAIL")
    return EXIT_OK


def _default_bandpass():
    from .dsp import FilterSpec
    return FilterSpec("chebyshev1", 2, "bandpass", (1.0, 20.0))


def main(argv=None) -> int:
    parser = _Parser(prog="tremorkit",
                     description="simulated wearable-tremor capture stack")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="synthesize a session log from a scenario")
    p.add_argument("--scenario", help="scenario JSON path")
    p.add_argument("--task", default="PP", help="built-in task if no scenario file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="log file to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="replay a log and print the per-task report")
    p.add_argument("log")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run the live engine with the socket API")
    p.add_argument("--scenario")
    p.add_argument("--task", default="PP")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--log", default="session.trclog")
    p.add_argument("--pseudo-id", default="live")
    p.add_argument("--fast", action="store_true", help="stream unpaced")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("train", help="cross-validate and fit a classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--algorithm", choices=("dt", "da", "svm", "knn"), default="svm")
    p.add_argument("--cv", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=1, help="kNN neighbours")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--out", help="write the fitted model JSON here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a fitted model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-noise", help="noise floor statistics vs the simulator")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_noise)

    p = sub.add_parser("bench-vibration", help="sine-exciter statistics")
    p.add_argument("--freq", type=float, default=10.0)
    p.add_argument("--pkpk", type=float, default=10.0, help="m/s^2 peak-to-peak")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_vibration)

    p = sub.add_parser("bench-latency", help="paced end-to-end latency measurement")
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--view", choices=("raw", "filtered", "norm", "short_term_power"),
                   default="filtered")
    p.set_defaults(func=cmd_bench_latency)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
