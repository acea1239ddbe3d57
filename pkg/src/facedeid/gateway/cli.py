"""Command-line entry points.

Verbs: submit, detect, densify, annotate-serve, privatize, evaluate,
report.  A global --config JSON file supplies defaults (documented in
the README); per-verb flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..adapters import PixelEmbedder, SubprocessEmbedder, load_image
from ..core import FaceDeidError
from ..detect import DetectorConfig
from ..evaluate import (
    EvalReport,
    blur_sweep,
    emit_report,
    expression_agreement,
    gaze_agreement,
    landmark_report,
    load_embeddings,
    load_expressions,
    load_gaze,
    load_landmarks,
    recognition_section,
)
from ..privatize import BlurSpec, PrivatizeOptions
from . import scheduler
from .service import GatewayConfig, PipelineService, parse_scale
from .store import SessionStore


def _store(args, config: GatewayConfig) -> SessionStore:
    root = args.store or config.store_root
    return SessionStore(root)


def _run_tracked_stage(store: SessionStore, service: PipelineService,
                       session_id: str, stage: str, **overrides) -> int:
    state, job_id = None, None

    def begin(st):
        nonlocal job_id
        st, job_id = scheduler.begin_manual(st, session_id, stage)
        return st

    store.mutate_jobs(begin)
    try:
        service.run_stage(stage, session_id, **overrides)
    except FaceDeidError as exc:
        store.mutate_jobs(lambda st: scheduler.finish_job(st, job_id, ok=False, error=str(exc)))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    store.mutate_jobs(
        lambda st: scheduler.advance_sessions(scheduler.finish_job(st, job_id, ok=True)))
    return 0


def cmd_submit(args, config) -> int:
    store = _store(args, config)
    session = store.create_session(args.frames, fps=args.fps)
    sid = session.manifest.session_id
    store.mutate_jobs(lambda st: scheduler.submit_job(st, sid, "detect"))
    print(sid)
    return 0


def cmd_detect(args, config) -> int:
    store = _store(args, config)
    service = PipelineService(store, config)
    overrides = {}
    if args.adapter:
        overrides["adapter_cmd"] = args.adapter
    if args.detections:
        overrides["batch_file"] = args.detections
    if args.stride or args.min_confidence is not None:
        base = config.detector_config()
        overrides["detector_config"] = DetectorConfig(
            stride=args.stride or base.stride,
            match_max_center_distance=base.match_max_center_distance,
            min_confidence=(args.min_confidence if args.min_confidence is not None
                            else base.min_confidence),
        )
    return _run_tracked_stage(store, service, args.session, "detect", **overrides)


def cmd_densify(args, config) -> int:
    store = _store(args, config)
    service = PipelineService(store, config)
    return _run_tracked_stage(store, service, args.session, "densify")


def cmd_annotate_serve(args, config) -> int:
    from .api import serve

    server = config.server
    serve(
        store_root=args.store or config.store_root,
        host=args.host or server.get("host", "127.0.0.1"),
        port=args.port or int(server.get("port", 8754)),
        config=config,
        frontend_dist=args.frontend or server.get("frontend_dist"),
    )
    return 0


def cmd_privatize(args, config) -> int:
    store = _store(args, config)
    service = PipelineService(store, config)
    base = config.privatize_options()
    options = PrivatizeOptions(
        mode=args.mode or base.mode,
        blur=BlurSpec(parse_scale(args.scale)) if args.scale else base.blur,
        margin=args.margin if args.margin is not None else base.margin,
        swap_fallback=base.swap_fallback,
        fallback_blur=base.fallback_blur,
        others_blur=base.others_blur,
        workers=base.workers,
    )
    overrides = {"options": options}
    if args.adapter:
        overrides["adapter_cmd"] = args.adapter
    if args.out:
        overrides["out_dir"] = args.out
    rc = _run_tracked_stage(store, service, args.session, "privatize", **overrides)
    if rc != 0:
        return rc
    out_dir = Path(args.out) if args.out else store.session_dir(args.session) / "renders"
    log = json.loads((out_dir / "render_log.json").read_text())
    summary = log["summary"]
    print(json.dumps(summary))
    return 1 if summary.get("failed") else 0


def _frame_aligned_pairs(originals, privatized):
    orig = {item.frame: item for item in originals}
    priv = {item.frame: item for item in privatized}
    return [(orig[f], priv[f]) for f in sorted(set(orig) & set(priv))]


def _load_references(path_text: str, embedder_cmd: str | None):
    """References as an embeddings JSON file, or a directory of
    identity-prefixed PNGs embedded on the fly."""
    from ..evaluate import EmbeddingRecord

    path = Path(path_text)
    if path.is_file():
        return load_embeddings(path)
    if not path.is_dir():
        raise ValueError(f"--references {path_text} is neither a file nor a directory")
    embedder = (SubprocessEmbedder(embedder_cmd.split())
                if embedder_cmd else PixelEmbedder())
    try:
        records = []
        for png in sorted(path.glob("*.png")):
            records.append(EmbeddingRecord(
                identity=png.stem.split("_")[0],
                image_ref=str(png),
                vector=embedder.embed_array(load_image(png)),
                recognizer=getattr(embedder, "name", "adapter"),
            ))
    finally:
        embedder.close()
    return records


def cmd_evaluate(args, config) -> int:
    report = EvalReport(condition=args.condition)

    if args.queries and args.references:
        queries = load_embeddings(args.queries)
        references = _load_references(args.references, args.recognizer)
        name = queries[0].recognizer if queries else "default"
        report.recognition[name] = recognition_section(
            queries, references, metric=args.metric)

    if args.original_landmarks and args.privatized_landmarks:
        pairs = _frame_aligned_pairs(load_landmarks(args.original_landmarks),
                                     load_landmarks(args.privatized_landmarks))
        report.landmarks = landmark_report(pairs)

    if args.original_gaze and args.privatized_gaze:
        report.gaze = gaze_agreement(load_gaze(args.original_gaze),
                                     load_gaze(args.privatized_gaze))

    if args.original_expressions and args.privatized_expressions:
        report.expression = expression_agreement(
            load_expressions(args.original_expressions),
            load_expressions(args.privatized_expressions))

    if args.sweep:
        if not args.references or not args.crops:
            print("error: --sweep requires --references and --crops", file=sys.stderr)
            return 2
        scales = [parse_scale(s) for s in args.sweep.split(",")]
        crops = []
        for path in sorted(Path(args.crops).glob("*.png")):
            identity = path.stem.split("_")[0]
            crops.append((identity, load_image(path)))
        references = _load_references(args.references, args.recognizer)
        embedder = (SubprocessEmbedder(args.recognizer.split())
                    if args.recognizer else PixelEmbedder())
        try:
            rows = blur_sweep(crops, scales, embedder, references)
        finally:
            embedder.close()
        report.recognition.setdefault("sweep", {})["blur_sweep"] = rows

    text = emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_report(args, config) -> int:
    report = EvalReport.from_dict(json.loads(Path(args.report).read_text()))
    text = emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facedeid",
                                     description="Video face de-identification toolkit")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--store", default=None, help="store root (overrides config)")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("submit", help="register a frame directory as a new session")
    p.add_argument("--frames", required=True)
    p.add_argument("--fps", type=float, default=60.0)

    p = sub.add_parser("detect", help="run sparse detection through an adapter")
    p.add_argument("--session", required=True)
    p.add_argument("--adapter", default=None, help="detector adapter command")
    p.add_argument("--detections", default=None, help="pre-computed detections JSON")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--min-confidence", type=float, default=None)

    p = sub.add_parser("densify", help="interpolate detections across skipped frames")
    p.add_argument("--session", required=True)

    p = sub.add_parser("annotate-serve", help="serve the annotation API (and UI)")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--frontend", default=None, help="built frontend dist directory")

    p = sub.add_parser("privatize", help="render blurred or face-swapped frames")
    p.add_argument("--session", required=True)
    p.add_argument("--mode", choices=["blur", "swap"], default=None)
    p.add_argument("--scale", default=None, help="blur scale, e.g. 1/5")
    p.add_argument("--adapter", default=None, help="swap adapter command")
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("evaluate", help="compute privacy/utility metrics from batch files")
    p.add_argument("--condition", required=True, help="original | swap | blur:1/15")
    p.add_argument("--queries", default=None, help="query embeddings JSON")
    p.add_argument("--references", default=None, help="reference embeddings JSON")
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--original-landmarks", default=None)
    p.add_argument("--privatized-landmarks", default=None)
    p.add_argument("--original-gaze", default=None)
    p.add_argument("--privatized-gaze", default=None)
    p.add_argument("--original-expressions", default=None)
    p.add_argument("--privatized-expressions", default=None)
    p.add_argument("--sweep", default=None, help="comma list of blur scales")
    p.add_argument("--crops", default=None, help="query crop PNGs (identity_*.png)")
    p.add_argument("--recognizer", default=None, help="embedding adapter command")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="re-render a stored report")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="csv")
    p.add_argument("--out", default=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = GatewayConfig.load(args.config)
    handler = {
        "submit": cmd_submit,
        "detect": cmd_detect,
        "densify": cmd_densify,
        "annotate-serve": cmd_annotate_serve,
        "privatize": cmd_privatize,
        "evaluate": cmd_evaluate,
        "report": cmd_report,
    }[args.verb]
    try:
        return handler(args, config)
    except FaceDeidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
