"""Gateway configuration and the pipeline stage bodies.

The annotate stage has no body (a human drives it through the API); every
other stage reads session state, produces its artifact under the session
directory, and updates the session through the single-writer owner.
Stage bodies overwrite their own outputs, so re-running one is safe.
"""

from __future__ import annotations

import json
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from .. import engine
from ..adapters import BatchFileDetector, SubprocessDetector, SwapAdapterClient, load_image, save_image
from ..core import SubjectTag, ValidationError
from ..detect import DetectorConfig, densify, run_sparse_detection
from ..core import DetectionSet
from ..evaluate import EvalReport, emit_report
from ..privatize import BlurSpec, PrivatizeOptions, extract_crop, privatize_session
from .store import SessionRegistry, SessionStore


def parse_scale(value) -> float:
    """Accept 0.2 or the '1/5' fraction notation."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _as_cmd(value) -> list[str] | None:
    if value is None:
        return None
    if isinstance(value, str):
        return shlex.split(value)
    return list(value)


@dataclass
class GatewayConfig:
    store_root: str = "./facedeid-store"
    detector: dict = field(default_factory=dict)
    chain: dict = field(default_factory=dict)
    privatize: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)
    limits: dict = field(default_factory=dict)
    server: dict = field(default_factory=dict)

    @staticmethod
    def load(path: str | Path | None) -> "GatewayConfig":
        if path is None:
            return GatewayConfig()
        doc = json.loads(Path(path).read_text())
        return GatewayConfig(**{
            k: doc[k] for k in (
                "store_root", "detector", "chain", "privatize",
                "evaluate", "limits", "server",
            ) if k in doc
        })

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            stride=int(self.detector.get("stride", 10)),
            match_max_center_distance=float(
                self.detector.get("match_max_center_distance", 0.5)),
            min_confidence=float(self.detector.get("min_confidence", 0.0)),
        )

    def chain_config(self) -> engine.ChainLinkConfig:
        return engine.ChainLinkConfig(
            gap_limit=int(self.chain.get("gap_limit", 30)),
            link_max_center_distance=float(
                self.chain.get("link_max_center_distance", 0.75)),
        )

    def privatize_options(self) -> PrivatizeOptions:
        p = self.privatize
        return PrivatizeOptions(
            mode=p.get("mode", "blur"),
            blur=BlurSpec(parse_scale(p.get("scale", "1/5"))),
            margin=float(p.get("margin", 0.0)),
            swap_fallback=p.get("swap_fallback", "blur"),
            others_blur=(BlurSpec(parse_scale(p.get("others_scale", "1/5")))
                         if p.get("blur_others") else None),
            workers=int(p.get("workers", 4)),
        )


class PipelineService:
    """Executes pipeline stages against the store."""

    def __init__(self, store: SessionStore, config: GatewayConfig,
                 registry: SessionRegistry | None = None):
        self.store = store
        self.config = config
        self.registry = registry or SessionRegistry(store)

    # -- stage bodies -----------------------------------------------------------

    def run_stage(self, stage: str, session_id: str, **overrides) -> None:
        body = {
            "detect": self.detect_stage,
            "densify": self.densify_stage,
            "extract": self.extract_stage,
            "privatize": self.privatize_stage,
            "evaluate": self.evaluate_stage,
        }.get(stage)
        if body is None:
            raise ValidationError(f"stage {stage!r} has no executable body")
        body(session_id, **overrides)

    def _make_detector(self, overrides: dict):
        batch = overrides.get("batch_file") or self.config.detector.get("batch_file")
        cmd = _as_cmd(overrides.get("adapter_cmd") or self.config.detector.get("adapter_cmd"))
        if batch:
            return BatchFileDetector(batch)
        if cmd:
            return SubprocessDetector(cmd)
        raise ValidationError(
            "no detector configured: set detector.adapter_cmd or detector.batch_file"
        )

    def detect_stage(self, session_id: str, **overrides) -> None:
        owner = self.registry.owner(session_id)
        session = owner.snapshot()
        cfg = overrides.get("detector_config") or self.config.detector_config()
        adapter = self._make_detector(overrides)
        try:
            sparse = run_sparse_detection(
                session.manifest, cfg, adapter,
                parallelism=int(self.config.detector.get("parallelism", 4)),
            )
        finally:
            adapter.close()
        detections_path = self.store.session_dir(session_id) / "detections.json"
        from .store import atomic_write_json

        atomic_write_json(detections_path, sparse.to_dict())
        owner.mutate(lambda s: engine.set_detections(s, sparse))

    def densify_stage(self, session_id: str, **overrides) -> None:
        owner = self.registry.owner(session_id)
        cfg = overrides.get("detector_config") or self.config.detector_config()
        detections_path = self.store.session_dir(session_id) / "detections.json"
        if not detections_path.is_file():
            raise ValidationError(f"session {session_id} has no detect output to densify")
        sparse = DetectionSet.from_dict(json.loads(detections_path.read_text()))
        dense = densify(sparse, cfg)
        owner.mutate(lambda s: engine.set_detections(s, dense))

    def extract_stage(self, session_id: str, **overrides) -> None:
        owner = self.registry.owner(session_id)
        session = owner.snapshot()
        if not session.pass_state.pass4:
            raise ValidationError("extract requires the annotation pass 4 to be complete")
        margin = float(overrides.get("margin", self.config.privatize.get("margin", 0.0)))
        crops_dir = self.store.session_dir(session_id) / "crops"
        crops_dir.mkdir(parents=True, exist_ok=True)
        for obs in session.final_track:
            frame = load_image(session.manifest.frame_path(obs.frame))
            crop = extract_crop(frame, obs.box, margin, obs.frame)
            save_image(crops_dir / f"{obs.frame:06d}.png", crop.pixels)
        track_csv = self.store.session_dir(session_id) / "track.csv"
        track_csv.write_text(engine.export_track_csv(session))

    def privatize_stage(self, session_id: str, **overrides) -> dict:
        owner = self.registry.owner(session_id)
        session = owner.snapshot()
        if not session.pass_state.pass4:
            raise ValidationError("privatize requires the annotation pass 4 to be complete")
        options = overrides.get("options") or self.config.privatize_options()
        out_dir = Path(overrides.get("out_dir") or
                       self.store.session_dir(session_id) / "renders")
        adapter = None
        if options.mode == "swap":
            cmd = _as_cmd(overrides.get("adapter_cmd") or self.config.privatize.get("adapter_cmd"))
            if not cmd:
                raise ValidationError("swap mode requires privatize.adapter_cmd")
            adapter = SwapAdapterClient(cmd)
        other_boxes: dict = {}
        if options.others_blur is not None:
            for chain in session.chains:
                if chain.subject_tag == SubjectTag.OTHER:
                    for obs in chain.observations:
                        other_boxes.setdefault(obs.frame, []).append(obs.box)
        try:
            return privatize_session(
                session.manifest, session.final_track, session.regions,
                options, out_dir, adapter=adapter, other_boxes=other_boxes,
            )
        finally:
            if adapter is not None:
                adapter.close()

    def evaluate_stage(self, session_id: str, **overrides) -> None:
        condition = overrides.get("condition") or self.config.evaluate.get("condition", "original")
        report = EvalReport(condition=condition)
        reports_dir = self.store.session_dir(session_id) / "reports"
        reports_dir.mkdir(parents=True, exist_ok=True)
        (reports_dir / "report.json").write_text(emit_report(report, "json"))
