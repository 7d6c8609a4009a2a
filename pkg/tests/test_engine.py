import json
import random

import numpy as np
import pytest

from tremorkit.dsp import FilterSpec, TimeSeries, design_filter, rms_detrended
from tremorkit.engine import (CaptureSink, DisplaySink, Engine, EngineConfig,
                              EngineError, SessionRunner, ViewSpec, byte_source,
                              render_pre_analysis, replay_log)
from tremorkit.logfile import LogError, read_log
from tremorkit.session import PP, RP, SessionMeta
from tremorkit.simulate import (Recording, SensorConfig, default_scenario,
                                quantize, synth_task)

META = SessionMeta(pseudo_id="t-01", disease="sim")


def make_stream(task=RP, seed=0, duration_s=12.0, config=None):
    config = config or SensorConfig()
    rec = synth_task(default_scenario(task, seed=seed, duration_s=duration_s), config)
    return quantize(rec, config)


def feed_all(engine, stream, chunk=20):
    for part in byte_source(stream, chunk):
        engine.feed_bytes(part)


# --------------------------------------------------------------------------
# Frame path
# --------------------------------------------------------------------------

def test_60s_rp_session_lossless(tmp_path):
    stream = make_stream(duration_s=60.0)
    path = tmp_path / "rp.trclog"
    engine = Engine(EngineConfig(), META, log=str(path))
    feed_all(engine, stream)
    engine.finalize()
    assert engine.frame_count == 12_000
    assert engine.gap_events == 0
    records = read_log(path)
    frames = sum(len(r.frames()) for r in records if r.type == 0x02)
    assert frames == 12_000
    perf = [r.json() for r in records if r.type == 0x05]
    assert len(perf) == 6          # one performance sample per 2000 frames
    assert all(p["mean_per_sample_ms"] >= 0 for p in perf)


def test_frame_gap_surfaces_event():
    stream = make_stream(duration_s=2.0)
    engine = Engine(EngineConfig(), META, log=None)
    cap = CaptureSink()
    engine.subscribe(cap)
    chunks = list(byte_source(stream, 20))
    engine.feed_bytes(chunks[0])
    engine.feed_bytes(chunks[2])           # drop chunk 1: 20 frames missing
    engine.flush()
    assert engine.gap_events == 1 and engine.missing_frames == 20
    gap_docs = [e for e in cap.events if e["action"] == "frame_gap"]
    assert gap_docs and gap_docs[0]["missing"] == 20


def test_decode_error_event_on_corruption():
    stream = make_stream(duration_s=1.0)
    engine = Engine(EngineConfig(), META, log=None)
    cap = CaptureSink()
    engine.subscribe(cap)
    wire = bytearray(b"".join(byte_source(stream, 20)))
    wire[40] ^= 0xFF
    engine.feed_bytes(bytes(wire))
    engine.flush()
    assert any(e["action"] == "decode_error" for e in cap.events)


def test_saturation_flag_counted():
    config = SensorConfig()
    rec = Recording(accel_mg=np.full((40, 3), 2500.0), gyro_dps=np.zeros((40, 3)),
                    mag_gauss=np.zeros((40, 3)), fs=config.fs)
    stream = quantize(rec, config)
    engine = Engine(EngineConfig(), META, log=None)
    feed_all(engine, stream)
    engine.flush()
    assert engine.saturated_frames == 40


def test_log_write_failure_hard_stop():
    class Exploding:
        def __init__(self):
            self.written = 0

        def write(self, data):
            self.written += len(data)
            if self.written > 2000:         # header fits, frame batches do not
                raise OSError("disk full")
            return len(data)

        def flush(self):
            pass

    engine = Engine(EngineConfig(), META, log=Exploding())
    with pytest.raises(EngineError, match="log write failed"):
        feed_all(engine, make_stream(duration_s=1.0))
    assert engine.failed
    with pytest.raises(EngineError):        # engine refuses further input
        engine.feed_bytes(b"")


# --------------------------------------------------------------------------
# Views
# --------------------------------------------------------------------------

def test_view_toggle_matches_offline_filter(tmp_path):
    """Filtered output after a mid-stream toggle equals the offline filter of
    the post-toggle raw segment; the config change lands at that exact index."""
    stream = make_stream(task=PP, seed=3, duration_s=6.0)
    path = tmp_path / "toggle.trclog"
    engine = Engine(EngineConfig(), META, log=str(path))
    cap = CaptureSink()
    engine.subscribe(cap)
    chunks = list(byte_source(stream, 20))
    spec = FilterSpec("chebyshev1", 2, "bandpass", (2.0, 20.0))
    toggle_at_chunk = 30
    for i, part in enumerate(chunks):
        if i == toggle_at_chunk:
            ack = engine.command("set_view", view={"kind": "filtered",
                                                   "filter": spec.__dict__ | {
                                                       "cutoffs": list(spec.cutoffs)}})
            assert ack["ok"]
            toggle_index = ack["sample_index"]
        engine.feed_bytes(part)
    engine.finalize()
    assert toggle_index == toggle_at_chunk * 20
    # offline oracle: same filter applied to the raw physical samples
    phys = engine.physical_samples()
    post = [b for b in cap.batches if b.view_kind == "filtered"]
    live = np.vstack([b.samples for b in post])
    offline = np.column_stack([
        design_filter(spec, engine.config.sensor.fs).process(phys[toggle_index:, a])
        for a in range(9)])
    assert np.array_equal(live, offline)
    # continuity: processed stream covers every sample exactly once
    covered = sum(b.samples.shape[0] for b in cap.batches)
    assert covered == engine.sample_count
    # the config record carries the toggle index
    config_recs = [r.json() for r in read_log(path) if r.type == 0x04]
    assert config_recs and config_recs[0]["sample_index"] == toggle_index


def test_norm_envelope_power_views_run():
    for kind in ("norm", "envelope", "short_term_power", "pca"):
        engine = Engine(EngineConfig(view=ViewSpec(kind)), META, log=None)
        cap = CaptureSink()
        engine.subscribe(cap)
        feed_all(engine, make_stream(duration_s=1.0))
        engine.flush()
        got = cap.processed_matrix()
        assert got.shape[0] == engine.sample_count
        assert np.all(np.isfinite(got))


def test_short_term_power_view_streaming_equals_offline():
    from tremorkit.dsp import short_term_power
    config = EngineConfig(view=ViewSpec("short_term_power", power_window=50),
                          enabled_axes=(1,))
    engine = Engine(config, META, log=None)
    cap = CaptureSink()
    engine.subscribe(cap)
    stream = make_stream(task=PP, duration_s=3.0)
    feed_all(engine, stream, chunk=17)
    engine.flush()
    phys = engine.physical_samples()[:, 1]
    live = cap.processed_matrix()[:, 0]
    # the streaming view is causal: window grows until it reaches 50 samples
    expected = np.array([np.mean(phys[max(0, i - 49):i + 1] ** 2)
                         for i in range(phys.size)])
    assert np.allclose(live, expected, rtol=1e-9)


def test_display_sink_drops_but_log_lossless(tmp_path):
    path = tmp_path / "drops.trclog"
    engine = Engine(EngineConfig(), META, log=str(path))
    slow = DisplaySink(maxlen=4)
    engine.subscribe(slow)
    stream = make_stream(duration_s=10.0)
    feed_all(engine, stream)                # never consumed: sink saturates
    engine.finalize()
    assert slow.drops > 0
    assert len(slow.batches) == 4
    frames = sum(len(r.frames()) for r in read_log(path) if r.type == 0x02)
    assert frames == engine.frame_count == 2000


# --------------------------------------------------------------------------
# Commands and annotation flow
# --------------------------------------------------------------------------

def test_caption_flow_produces_expected_string(tmp_path):
    engine = Engine(EngineConfig(), META, log=str(tmp_path / "c.trclog"))
    stream = make_stream(duration_s=4.0)
    chunks = list(byte_source(stream, 20))
    for part in chunks[:10]:
        engine.feed_bytes(part)
    for idx in range(1, 5):                  # tasks 1..4 precede the example
        engine.command("start_task", task="RP")
        engine.command("stop_task")
    engine.command("start_task", task="FN")
    engine.command("score", value=3)
    engine.command("dbs_step", field="amplitude", step=0.5)
    engine.command("dbs_set")
    engine.command("side_effect", code=5)
    for part in chunks[10:20]:
        engine.feed_bytes(part)
    ack = engine.command("stop_task")
    engine.finalize()
    assert ack["event"] == "5-FN/S3/DBS-3.5V-130Hz-60us/SE6"


def test_rejected_commands_do_not_change_state():
    engine = Engine(EngineConfig(), META, log=None)
    before = engine.state_digest()
    assert engine.command("score", value=3)["ok"] is False
    assert engine.command("stop_task")["ok"] is False
    assert engine.command("start_task", task="XYZ")["ok"] is False
    assert engine.command("bogus")["ok"] is False
    assert engine.state_digest() == before


def test_dbs_pending_vs_confirmed():
    engine = Engine(EngineConfig(), META, log=None)
    engine.command("start_task", task="PP")
    ack = engine.command("dbs_step", field="frequency", step=10)
    assert ack["pending_dbs"]["frequency"] == 140
    closed = None
    assert engine.session.open_event.dbs is None      # grey box not yet confirmed
    engine.command("dbs_set")
    assert engine.session.open_event.dbs.frequency == 140


def test_command_fuzz_replay_equivalence(tmp_path):
    rng = random.Random(777)
    stream = make_stream(duration_s=30.0)
    chunks = list(byte_source(stream, 20))
    path = tmp_path / "fuzz.trclog"
    engine = Engine(EngineConfig(), META, log=str(path))
    actions = ["start_task", "stop_task", "score", "dbs_step", "dbs_set",
               "side_effect", "set_point", "set_view"]
    ci = 0
    for _ in range(1500):
        if rng.random() < 0.35 and ci < len(chunks):
            engine.feed_bytes(chunks[ci])
            ci += 1
            continue
        action = rng.choice(actions)
        args = {}
        if action == "start_task":
            args["task"] = rng.choice(["RP", "PP", "FN", "HM"])
        elif action == "score":
            args["value"] = rng.randint(0, 4)
        elif action == "dbs_step":
            args["field"], args["step"] = rng.choice(
                [("amplitude", 0.5), ("amplitude", -0.1), ("frequency", 5),
                 ("pulse_width", 10), ("frequency", -2)])
        elif action == "side_effect":
            args["code"] = rng.randint(0, 7)
        elif action == "set_view":
            args["view"] = rng.choice([{"kind": "raw"}, {"kind": "norm"},
                                       {"kind": "short_term_power"}])
        engine.command(action, **args)
    engine.finalize()
    replayed = replay_log(path)
    assert replayed.state_digest() == engine.state_digest()
    if engine.session.events:
        a = engine.pre_analysis()
        b = replayed.pre_analysis()
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


# --------------------------------------------------------------------------
# Pre-analysis
# --------------------------------------------------------------------------

def _run_task_session(task=PP, seed=0, duration_s=12.0):
    engine = Engine(EngineConfig(), META, log=None)
    stream = make_stream(task=task, seed=seed, duration_s=duration_s)
    chunks = list(byte_source(stream, 20))
    margin = len(chunks) // 12
    for i, part in enumerate(chunks):
        if i == margin:
            engine.command("start_task", task=task.label)
        if i == len(chunks) - margin:
            engine.command("stop_task")
        engine.feed_bytes(part)
    engine.flush()
    if engine.session.open_event is not None:
        engine.command("stop_task")
    return engine


def test_pp_pre_analysis_dominant_frequency_and_rms():
    engine = _run_task_session(PP, seed=6)
    report = engine.pre_analysis()
    stats = report["tasks"][0]["channels"]["accel_y"]
    assert stats["dominant_hz"] == pytest.approx(12.7, abs=0.5)
    assert 3.0 <= stats["rms"] <= 7.0


def test_zero_signal_task_flagged():
    config = SensorConfig(accel_noise_psd_ug=0.0, gyro_noise_psd_dps=0.0,
                          mag_rms_noise_mgauss=(0.0, 0.0, 0.0))
    rec = Recording(accel_mg=np.zeros((400, 3)), gyro_dps=np.zeros((400, 3)),
                    mag_gauss=np.zeros((400, 3)), fs=config.fs)
    engine = Engine(EngineConfig(sensor=config), META, log=None)
    engine.command("start_task", task="RP")
    feed_all(engine, quantize(rec, config))
    engine.flush()
    engine.command("stop_task")
    stats = engine.pre_analysis()["tasks"][0]["channels"]["accel_x"]
    assert stats["rms"] == 0.0 and stats["dominant_hz"] is None


def test_report_equals_offline_recomputation():
    engine = _run_task_session(PP, seed=8)
    report = engine.pre_analysis()
    e = engine.session.events[0]
    start, end = e.sample_range
    seg = engine.physical_samples()[start:end]
    fs = engine.config.sensor.fs
    from tremorkit.dsp import peak_stats, psd_from_rms
    for axis, name in [(0, "accel_x"), (4, "gyro_y"), (8, "mag_z")]:
        x = TimeSeries(seg[:, axis], fs)
        got = report["tasks"][0]["channels"][name]
        assert got["rms"] == pytest.approx(rms_detrended(x), rel=1e-12)
        assert got["peak_to_peak"] == pytest.approx(peak_stats(x)[0], rel=1e-12)
        assert got["psd"] == pytest.approx(psd_from_rms(rms_detrended(x), fs), rel=1e-12)
    text = render_pre_analysis(report)
    assert "accel_y" in text and "1-PP" in text


def test_pre_analysis_requires_closed_task():
    engine = Engine(EngineConfig(), META, log=None)
    with pytest.raises(EngineError):
        engine.pre_analysis()


# --------------------------------------------------------------------------
# Replay and log robustness
# --------------------------------------------------------------------------

def test_replay_truncated_log_names_last_good(tmp_path):
    path = tmp_path / "trunc.trclog"
    engine = Engine(EngineConfig(), META, log=str(path))
    feed_all(engine, make_stream(duration_s=2.0))
    engine.command("start_task", task="RP")
    engine.command("stop_task")
    engine.finalize()
    blob = path.read_bytes()
    cut = tmp_path / "cut.trclog"
    cut.write_bytes(blob[:-7])                 # chop mid-record
    with pytest.raises(LogError) as err:
        replay_log(cut)
    records = read_log(path)
    assert err.value.last_good_seq == records[-2].seq


def test_replay_random_sessions_round_trip(tmp_path):
    rng = random.Random(4242)
    for case in range(10):
        stream = make_stream(seed=case, duration_s=3.0)
        path = tmp_path / f"s{case}.trclog"
        engine = Engine(EngineConfig(), META, log=str(path))
        chunks = list(byte_source(stream, 20))
        for i, part in enumerate(chunks):
            if i == 2:
                engine.command("start_task",
                               task=rng.choice(["RP", "PP", "FN", "HM"]))
                if rng.random() < 0.7:
                    engine.command("score", value=rng.randint(0, 4))
            if i == len(chunks) - 2:
                engine.command("stop_task")
            engine.feed_bytes(part)
        engine.finalize()
        replayed = replay_log(path)
        assert replayed.state_digest() == engine.state_digest()


# --------------------------------------------------------------------------
# Live runner
# --------------------------------------------------------------------------

def test_runner_serializes_commands_and_frames(tmp_path):
    stream = make_stream(duration_s=4.0)
    path = tmp_path / "live.trclog"
    engine = Engine(EngineConfig(), META, log=str(path))
    runner = SessionRunner(engine, byte_source(stream, 20)).start()
    ack = runner.command("start_task", task="RP")
    assert ack["ok"]
    runner.wait_source_end(10.0)
    ack2 = runner.command("stop_task")
    assert ack2["ok"]
    runner.close()
    assert engine.frame_count == 800
    replayed = replay_log(path)
    assert replayed.state_digest() == engine.state_digest()


def test_runner_paced_latency_budget():
    stream = make_stream(duration_s=3.0)
    engine = Engine(EngineConfig(view=ViewSpec("filtered",
                    filter_spec=FilterSpec("chebyshev1", 2, "bandpass",
                                           (1.0, 20.0)))), META, log=None)
    runner = SessionRunner(engine, byte_source(stream, 20, pace_hz=200.0)).start()
    runner.wait_source_end(20.0)
    stats = runner.close()
    assert stats.mean_per_sample_ms <= 0.467
    assert stats.e2e_p95_ms is not None and stats.e2e_p95_ms < 160.0
