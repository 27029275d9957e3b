"""Command-line entry points: generate, run, evaluate, latency, bench."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import queue
import sys
import threading
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import catchsim, formats, latency, simgen
from .config import AppConfig, ConfigError, load, scene_from
from .core import NS_PER_S, CameraIntrinsics, EventBuffer, Frame, RigidTransform
from .pipeline import Pipeline

LOG_ENV = "EVCATCH_LOG_LEVEL"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
QUEUE_SIZE = 8

log = logging.getLogger("evcatch")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        out = {"schema": formats.LOG_SCHEMA, "level": record.levelname, "msg": record.getMessage()}
        out.update(getattr(record, "fields", {}))
        return formats.dumps(out)


def setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    log.handlers[:] = [handler]
    log.setLevel(getattr(logging, level, logging.WARNING))
    log.propagate = False


def _info(msg, **fields):
    log.info(msg, extra={"fields": fields})


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # validation failures exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _config(args) -> AppConfig:
    cfg = load(args.config) if args.config else AppConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    import cv2
    import numba

    cv2.setNumThreads(n)
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# -- camera sidecar -------------------------------------------------------------


def write_camera(path, intrinsics: CameraIntrinsics, T_BC: RigidTransform) -> None:
    data = {
        "schema": formats.LOG_SCHEMA,
        "intrinsics": {k: getattr(intrinsics, k) for k in ("fx", "fy", "cx", "cy", "width", "height")},
        "camera_to_body": {"rotation": T_BC.rotation.tolist(), "translation": T_BC.translation.tolist()},
    }
    Path(path).write_text(formats.dumps(data) + "\n")


def read_camera(path) -> tuple[CameraIntrinsics, RigidTransform]:
    try:
        data = json.loads(Path(path).read_text())
        intr = CameraIntrinsics(**data["intrinsics"])
        ext = data["camera_to_body"]
        T = RigidTransform(np.array(ext["rotation"], float), np.array(ext["translation"], float),
                           Frame.CAMERA, Frame.BODY)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise formats.FormatError(f"{path}: {exc}") from None
    return intr, T


def _truth_record(truth: simgen.GroundTruth) -> dict:
    th = truth.throw
    return {
        "schema": formats.LOG_SCHEMA,
        "t_impact": truth.t_impact,
        "p_impact_body": truth.p_impact_body,
        "n_impact_body": truth.n_impact_body,
        "p0_world": truth.p0_world,
        "v0_world": truth.v0_world,
        "t_ref": truth.t_ref,
        "ball_diameter": None if th is None else th.ball_diameter,
        "T_world_body_final": {"rotation": truth.T_world_body_final.rotation,
                               "translation": truth.T_world_body_final.translation},
    }


# -- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _config(args)
    scene, throw = scene_from(cfg.scene, cfg.seed)
    data = simgen.generate(scene, throw)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    intr = scene.intrinsics
    formats.write_events(out / "events.evt", data.events, intr.width, intr.height, scene.epoch_ns)
    formats.write_imu(out / "imu.txt", data.imu)
    formats.write_odometry(out / "odometry.txt", data.odometry)
    write_camera(out / "camera.json", intr, scene.camera_to_body)
    (out / "truth.json").write_text(formats.dumps(_truth_record(data.truth)) + "\n")
    (out / "labels.u8").write_bytes(data.truth.labels.astype(np.uint8).tobytes())
    _info("generated", events=len(data.events), output=str(out))
    print(f"wrote {len(data.events)} events to {out}")
    return EXIT_OK


_DONE = object()


def _reader(path, window_ns: int, q: queue.Queue, errors: list) -> None:
    """Split the event file into consecutive windows from the header epoch."""
    try:
        chunks = formats.iter_event_chunks(path)
        _, _, epoch = next(chunks)
        t0 = epoch
        pending = []
        for ev in chunks:
            pending.append(ev)
            buf = np.concatenate(pending) if len(pending) > 1 else pending[0]
            t = buf["t"]
            lo = 0
            while len(t) and int(t[-1]) >= t0 + window_ns:
                hi = int(np.searchsorted(t, np.uint64(t0 + window_ns), side="left"))
                q.put(EventBuffer(buf[lo:hi], t0, window_ns))
                lo = hi
                t0 += window_ns
            pending = [buf[lo:]]
        rest = np.concatenate(pending) if pending else np.zeros(0, formats.EVENT_DTYPE)
        if len(rest):
            q.put(EventBuffer(rest, t0, window_ns))
    except Exception as exc:  # handed to the main thread
        errors.append(exc)
    finally:
        q.put(_DONE)


def _worker(pipe: Pipeline, imu, odom, qin: queue.Queue, qout: queue.Queue, errors: list) -> None:
    try:
        while True:
            item = qin.get()
            if item is _DONE:
                break
            if errors:
                continue  # drain so the reader never blocks forever
            qout.put(pipe.process(item, imu, odom))
    except Exception as exc:
        errors.append(exc)
        while qin.get() is not _DONE:
            pass
    finally:
        qout.put(_DONE)


def _estimate_fields(est) -> dict | None:
    if est is None:
        return None
    return {"t_imp": est.t_imp, "p_imp": est.p_imp, "residual": est.residual, "t_created": est.t_created}


def _writer(out: Path, qin: queue.Queue, truth: dict | None, errors: list, results: list) -> None:
    try:
        with formats.JsonlWriter(out / "detections.jsonl") as det, \
                formats.JsonlWriter(out / "impacts.jsonl") as imp:
            while True:
                r = qin.get()
                if r is _DONE:
                    break
                results.append(r)
                for d in r.detections:
                    det.write("detection", cycle=r.index, t=d.t, p_world=d.p_world, p_camera=d.p_camera,
                              width_px=d.width_px)
                if r.estimate is not None or r.filtered is not None:
                    imp.write("impact", cycle=r.index, t=r.t1 / NS_PER_S, status=r.status,
                              raw=_estimate_fields(r.estimate), filtered=_estimate_fields(r.filtered),
                              committed=r.committed)
        if truth is not None:
            _write_errors(out / "impact_error.json", results, truth)
    except Exception as exc:
        errors.append(exc)
        while qin.get() is not _DONE:
            pass


def _write_errors(path: Path, results, truth: dict) -> None:
    p_true = np.array(truth["p_impact_body"], float)
    rows = []
    for r in results:
        if r.filtered is not None:
            rows.append({"cycle": r.index, "t": r.t1 / NS_PER_S,
                         "error": float(np.linalg.norm(r.filtered.p_imp - p_true))})
    before = [row for row in rows if row["t"] <= truth["t_impact"]]
    final = before[-1]["error"] if before else math.inf
    path.write_text(formats.dumps({"schema": formats.LOG_SCHEMA, "t_impact": truth["t_impact"],
                                   "final_error": final, "per_cycle": rows}) + "\n")


def run_files(cfg: AppConfig, input_dir, output_dir, debug_dir=None) -> list:
    """Reader, pipeline worker and writer threads joined by bounded queues."""
    inp, out = Path(input_dir), Path(output_dir)
    intr, T_BC = read_camera(inp / "camera.json")
    imu = formats.read_imu(inp / "imu.txt")
    odom = formats.read_odometry(inp / "odometry.txt")
    truth = json.loads((inp / "truth.json").read_text()) if (inp / "truth.json").exists() else None
    if truth is not None and not math.isfinite(truth.get("t_impact") or math.nan):
        truth = None
    out.mkdir(parents=True, exist_ok=True)
    if debug_dir is not None:
        Path(debug_dir).mkdir(parents=True, exist_ok=True)
    pipe = Pipeline(cfg.pipeline, intr, T_BC, 0, debug_dir)
    q_events: queue.Queue = queue.Queue(QUEUE_SIZE)
    q_results: queue.Queue = queue.Queue(QUEUE_SIZE)
    errors: list = []
    results: list = []
    threads = [
        threading.Thread(target=_reader, args=(inp / "events.evt", pipe.window_ns, q_events, errors)),
        threading.Thread(target=_worker, args=(pipe, imu, odom, q_events, q_results, errors)),
        threading.Thread(target=_writer, args=(out, q_results, truth, errors, results)),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


def cmd_run(args) -> int:
    cfg = _config(args)
    results = run_files(cfg, args.input, args.output, args.debug_dumps)
    n_det = sum(len(r.detections) for r in results)
    _info("run finished", cycles=len(results), detections=n_det)
    print(f"{len(results)} cycles, {n_det} detections -> {args.output}")
    return EXIT_OK


def evaluate(cfg: AppConfig, output_dir, n_throws: int | None = None, progress=None):
    sweep = cfg.sweep if n_throws is None else replace(cfg.sweep, n_throws=n_throws)
    outcomes = catchsim.evaluate_throws(sweep, cfg.pipeline, progress)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    catchsim.write_csv(out / "catch_table.csv", catchsim.catch_table(outcomes))
    catchsim.write_csv(out / "vision_table.csv", catchsim.vision_table(outcomes))
    catchsim.write_csv(out / "throws.csv", catchsim.outcome_rows(outcomes))
    return outcomes


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    start = time.perf_counter()

    def progress(o):
        _info("throw", index=o.index, speed=o.speed, deviation=o.deviation, vision_error=o.vision_error,
              miss=o.miss_distance)

    outcomes = evaluate(cfg, args.output, args.throws, progress)
    for row in catchsim.catch_table(outcomes):
        print(f"catch  speed [{row['speed_lo']:g}, {row['speed_hi']:g}) m/s: "
              f"{row['success_pct']:.1f}% of {row['throws']}")
    for row in catchsim.vision_table(outcomes):
        print(f"vision dev < {row['deviation_lt']:g} m, speed < {row['speed_lt']:g} m/s: "
              f"{row['success_pct']:.1f}% of {row['throws']}")
    _info("evaluate finished", throws=len(outcomes), seconds=time.perf_counter() - start)
    return EXIT_OK


def cmd_latency(args) -> int:
    if args.dtc_ms <= 0 or (args.fps is not None and args.fps <= 0):
        raise ConfigError("--dtc-ms and --fps must be positive")
    dt_fps = 1.0 / args.fps if args.fps else 0.0
    params = latency.LatencyParams(args.dtc_ms / 1e3, dt_fps, args.mode, args.detections)
    rep = latency.worst_case_latency(params)
    record = {"schema": formats.LOG_SCHEMA, "mode": rep.mode.value, "worst_case_ms": rep.worst_case * 1e3,
              "branch": rep.branch, "waiting_ms": rep.waiting * 1e3,
              "detection_terms_ms": [t * 1e3 for t in rep.detection_terms]}
    if args.dtc_image_ms is not None and dt_fps > 0:
        two, one = latency.event_advantage(args.dtc_ms / 1e3, dt_fps, args.dtc_image_ms / 1e3)
        record["event_advantage"] = {"two_shot": two, "one_shot": one}
    if args.json:
        print(formats.dumps(record))
    else:
        print(latency.format_report(rep))
        if "event_advantage" in record:
            print(f"event_advantage two_shot={two} one_shot={one}")
    return EXIT_OK


def bench_stream(cfg: AppConfig, input_dir=None):
    """Events, IMU, odometry and camera for the benchmark (files or the configured scene)."""
    if input_dir is not None:
        inp = Path(input_dir)
        ef = formats.read_events(inp / "events.evt")
        intr, T_BC = read_camera(inp / "camera.json")
        return (ef.events, formats.read_imu(inp / "imu.txt"), formats.read_odometry(inp / "odometry.txt"),
                intr, T_BC, ef.epoch_ns)
    scene, throw = scene_from(cfg.scene, cfg.seed)
    data = simgen.generate(scene, throw)
    return data.events, data.imu, data.odometry, scene.intrinsics, scene.camera_to_body, scene.epoch_ns


def bench(cfg: AppConfig, input_dir=None, warmup: int = 1, repeats: int = 1) -> latency.TimingReport:
    """Offline cycle timings; ``warmup`` passes load compiled kernels and warm caches first."""
    from .pipeline import iter_buffers

    events, imu, odom, intr, T_BC, epoch = bench_stream(cfg, input_dir)
    t_end = int(events["t"][-1]) + 1 if len(events) else epoch
    results = []
    for k in range(warmup + repeats):
        pipe = Pipeline(cfg.pipeline, intr, T_BC)
        cycles = [pipe.process(b, imu, odom) for b in iter_buffers(events, epoch, t_end, pipe.window_ns)]
        if k >= warmup:
            results.extend(cycles)
    return latency.measure_pipeline(results, cfg.pipeline.segmentation.window)


def cmd_bench(args) -> int:
    cfg = _config(args)
    rep = bench(cfg, args.input, args.warmup, args.repeats)
    record = {"schema": formats.LOG_SCHEMA, **rep.to_dict()}
    if args.output:
        Path(args.output).write_text(formats.dumps(record) + "\n")
    print(f"cycles={rep.cycles} rate={rep.cycle_rate:.1f}/s p50={rep.cycle_ms['p50']:.2f} ms "
          f"p99={rep.cycle_ms['p99']:.2f} ms")
    for stage, pct in rep.stage_ms.items():
        print(f"  {stage:8s} p50={pct['p50']:.2f} ms p99={pct['p99']:.2f} ms")
    if args.write_baseline:
        latency.write_baseline(args.write_baseline, rep)
    if args.baseline:
        problems = latency.regression(rep, latency.read_baseline(args.baseline))
        for p in problems:
            print(f"REGRESSION {p}")
        if problems:
            return EXIT_VALIDATION
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evcatch", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, output_required=True):
        sp.add_argument("--config", help="YAML config file (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--output", required=output_required, help="output directory or file")
        sp.add_argument("--debug-dumps", dest="debug_dumps", help="directory for per-cycle PGM dumps")
        sp.add_argument("--threads", type=int, help="threads for numeric kernels")

    g = sub.add_parser("generate", help="simulate a scene to event/IMU/odometry/truth files")
    common(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run the pipeline over a generated or recorded directory")
    common(r)
    r.add_argument("--input", required=True, help="directory with events.evt, imu.txt, odometry.txt, camera.json")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="throw sweep: catch and vision tables as CSV")
    common(e)
    e.add_argument("--throws", type=int, help="override the number of throws")
    e.set_defaults(func=cmd_evaluate)

    la = sub.add_parser("latency", help="worst-case perceptual latency closed forms")
    common(la, output_required=False)
    la.add_argument("--fps", type=float, help="frame rate (frame_two_shot)")
    la.add_argument("--dtc-ms", dest="dtc_ms", type=float, required=True, help="compute time per detection")
    la.add_argument("--mode", default="frame_two_shot", choices=[m.value for m in latency.Mode])
    la.add_argument("--detections", type=int, default=2)
    la.add_argument("--dtc-image-ms", dest="dtc_image_ms", type=float,
                    help="frame pipeline compute time, enables the advantage check")
    la.add_argument("--json", action="store_true")
    la.set_defaults(func=cmd_latency)

    b = sub.add_parser("bench", help="per-stage timing report on a VGA stream")
    common(b, output_required=False)
    b.add_argument("--input", help="directory from `generate` (default: configured scene)")
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--baseline", help="fail if outside the baseline's tolerance band")
    b.add_argument("--write-baseline", dest="write_baseline", help="record this run as the baseline")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (ConfigError, formats.FormatError, FileNotFoundError) as exc:
        log.error(str(exc), extra={"fields": {"kind": type(exc).__name__}})
        return EXIT_VALIDATION
    except Exception as exc:
        log.error(str(exc), extra={"fields": {"kind": type(exc).__name__}})
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
