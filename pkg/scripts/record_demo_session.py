#!/usr/bin/env python3
"""Headless demo of the annotation flow: stream a simulated session through
the engine, drive the clinician commands that produce the canonical
"5-FN/S3/DBS-3.5V-130Hz-60us/SE6" event, then print the event list and the
per-task pre-analysis.

Usage: python scripts/record_demo_session.py [logfile]
"""

import sys

from tremorkit.engine import Engine, EngineConfig, byte_source, render_pre_analysis
from tremorkit.session import SessionMeta
from tremorkit.simulate import default_scenario, quantize, synth_task
from tremorkit.session import task_from_label


def main():
    log_path = sys.argv[1] if len(sys.argv) > 1 else "demo_session.trclog"
    config = EngineConfig()
    meta = SessionMeta(pseudo_id="demo-01", disease="simulated")
    engine = Engine(config, meta, log=log_path)

    tasks = ["RP", "PP", "FN", "HM", "FN"]
    for index, label in enumerate(tasks):
        scenario = default_scenario(task_from_label(label), seed=40 + index,
                                    duration_s=8.0)
        stream = quantize(synth_task(scenario, config.sensor), config.sensor)
        chunks = list(byte_source(stream, config.chunk_frames))
        for i, chunk in enumerate(chunks):
            if i == 2:
                engine.command("start_task", task=label)
                if index == 4:                       # the showcase task
                    engine.command("score", value=3)
                    engine.command("dbs_step", field="amplitude", step=0.5)
                    engine.command("dbs_set")
                    engine.command("side_effect", code=5)
            engine.feed_bytes(chunk)
        engine.command("stop_task")
    engine.finalize()

    print("event list:")
    for line in engine.session.event_strings():
        print(f"  {line}")
    print()
    print(render_pre_analysis(engine.pre_analysis()))
    print(f"\nlog written to {log_path}")


if __name__ == "__main__":
    main()
