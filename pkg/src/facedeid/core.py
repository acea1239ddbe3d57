"""Shared domain types, box geometry, and session serialization.

Everything here is an immutable value object; sessions are only mutated
through the annotation engine, which returns fresh snapshots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

SESSION_FORMAT_VERSION = 1
FRAME_NAME_PATTERN = "{:06d}.png"


class FaceDeidError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FaceDeidError):
    """A domain invariant was violated."""


class SessionParseError(FaceDeidError):
    """Session byte stream could not be decoded.

    ``offset`` is the byte offset at which decoding failed (0 for
    schema-level failures that have no meaningful position).
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class Provenance(str, Enum):
    DETECTED = "detected"
    MANUAL = "manual"
    INTERPOLATED = "interpolated"


class SubjectTag(str, Enum):
    UNTAGGED = "untagged"
    KEY_SUBJECT = "key_subject"
    OTHER = "other"


class KeyFrameKind(str, Enum):
    SUBJECT_ENTER = "subject_enter"
    SUBJECT_LEAVE = "subject_leave"
    CHAIN_START = "chain_start"
    CHAIN_END = "chain_end"
    SUPPLEMENTAL = "supplemental"


def round_half_up(v: float) -> int:
    """Round to nearest integer, halves away from floor ties (0.5 -> 1)."""
    return math.floor(v + 0.5)


@dataclass(frozen=True)
class BoxGeom:
    """Axis-aligned pixel box: top-left corner plus size."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not isinstance(v, int):
                raise ValidationError(f"box field {name} must be int, got {type(v).__name__}")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"box origin must be non-negative, got ({self.x}, {self.y})")
        if self.w < 1 or self.h < 1:
            raise ValidationError(f"box size must be >= 1, got {self.w}x{self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)

    def clamped(self, frame_w: int, frame_h: int) -> Optional["BoxGeom"]:
        """Intersect with the frame rectangle; None if nothing remains."""
        x0 = max(self.x, 0)
        y0 = max(self.y, 0)
        x1 = min(self.x + self.w, frame_w)
        y1 = min(self.y + self.h, frame_h)
        if x1 - x0 < 1 or y1 - y0 < 1:
            return None
        return BoxGeom(x0, y0, x1 - x0, y1 - y0)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @staticmethod
    def from_dict(d: dict) -> "BoxGeom":
        return BoxGeom(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


def box_center(box: BoxGeom) -> tuple[float, float]:
    return box.center


def center_distance(a: BoxGeom, b: BoxGeom) -> float:
    ax, ay = a.center
    bx, by = b.center
    return math.hypot(ax - bx, ay - by)


@dataclass(frozen=True)
class FaceObservation:
    """One bounding box on one frame, with provenance."""

    frame: int
    box: BoxGeom
    confidence: float = 1.0
    provenance: Provenance = Provenance.DETECTED
    chain_id: Optional[str] = None

    def __post_init__(self):
        if self.frame < 0:
            raise ValidationError(f"frame index must be >= 0, got {self.frame}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence must lie in [0,1], got {self.confidence}")

    def with_chain(self, chain_id: str) -> "FaceObservation":
        return replace(self, chain_id=chain_id)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "box": self.box.to_dict(),
            "confidence": self.confidence,
            "provenance": self.provenance.value,
            "chain_id": self.chain_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "FaceObservation":
        return FaceObservation(
            frame=int(d["frame"]),
            box=BoxGeom.from_dict(d["box"]),
            confidence=float(d["confidence"]),
            provenance=Provenance(d["provenance"]),
            chain_id=d.get("chain_id"),
        )


def lerp_box(a: FaceObservation, b: FaceObservation, frame: int) -> BoxGeom:
    """Linearly interpolate a box between two observations.

    Each coordinate interpolates independently and rounds half-up to an
    integer pixel; width/height are clamped to >= 1.  Argument order does
    not matter: the earlier observation is always the left endpoint.
    """
    lo, hi = (a, b) if a.frame <= b.frame else (b, a)
    if not (lo.frame < frame < hi.frame):
        raise ValidationError(
            f"frame {frame} not strictly inside ({lo.frame}, {hi.frame})"
        )
    t = (frame - lo.frame) / (hi.frame - lo.frame)

    def comp(u: int, v: int) -> int:
        return round_half_up(u + (v - u) * t)

    w = max(1, comp(lo.box.w, hi.box.w))
    h = max(1, comp(lo.box.h, hi.box.h))
    return BoxGeom(comp(lo.box.x, hi.box.x), comp(lo.box.y, hi.box.y), w, h)


def lerp_observation(a: FaceObservation, b: FaceObservation, frame: int) -> FaceObservation:
    """Interpolated observation; confidence is the min of the endpoints."""
    return FaceObservation(
        frame=frame,
        box=lerp_box(a, b, frame),
        confidence=min(a.confidence, b.confidence),
        provenance=Provenance.INTERPOLATED,
        chain_id=a.chain_id if a.chain_id == b.chain_id else None,
    )


@dataclass(frozen=True)
class FaceChain:
    """Temporally linked run of observations attributed to one person."""

    id: str
    observations: tuple[FaceObservation, ...]
    subject_tag: SubjectTag = SubjectTag.UNTAGGED

    def __post_init__(self):
        if not self.observations:
            raise ValidationError(f"chain {self.id} has no observations")
        frames = [o.frame for o in self.observations]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValidationError(f"chain {self.id} frames not strictly increasing: {frames}")
        for o in self.observations:
            if o.chain_id != self.id:
                raise ValidationError(
                    f"observation at frame {o.frame} carries chain_id {o.chain_id!r}, "
                    f"expected {self.id!r}"
                )

    @property
    def start_frame(self) -> int:
        return self.observations[0].frame

    @property
    def end_frame(self) -> int:
        return self.observations[-1].frame

    def max_gap(self) -> int:
        frames = [o.frame for o in self.observations]
        if len(frames) == 1:
            return 0
        return max(b - a for a, b in zip(frames, frames[1:]))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "subject_tag": self.subject_tag.value,
            "observations": [o.to_dict() for o in self.observations],
        }

    @staticmethod
    def from_dict(d: dict) -> "FaceChain":
        return FaceChain(
            id=d["id"],
            observations=tuple(FaceObservation.from_dict(o) for o in d["observations"]),
            subject_tag=SubjectTag(d["subject_tag"]),
        )


@dataclass(frozen=True)
class PresenceRegion:
    """Inclusive frame interval during which the key subject is in view."""

    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ValidationError(
                f"region start {self.start_frame} > end {self.end_frame}"
            )

    def __contains__(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame

    def frames(self) -> range:
        return range(self.start_frame, self.end_frame + 1)

    def to_dict(self) -> dict:
        return {"start_frame": self.start_frame, "end_frame": self.end_frame}

    @staticmethod
    def from_dict(d: dict) -> "PresenceRegion":
        return PresenceRegion(int(d["start_frame"]), int(d["end_frame"]))


def validate_regions(regions: tuple[PresenceRegion, ...]) -> None:
    """Regions within one session must be disjoint and sorted."""
    for a, b in zip(regions, regions[1:]):
        if b.start_frame <= a.end_frame:
            raise ValidationError(
                f"regions [{a.start_frame},{a.end_frame}] and "
                f"[{b.start_frame},{b.end_frame}] overlap or are unsorted"
            )


@dataclass(frozen=True)
class KeyFrameMark:
    frame: int
    kind: KeyFrameKind

    def to_dict(self) -> dict:
        return {"frame": self.frame, "kind": self.kind.value}

    @staticmethod
    def from_dict(d: dict) -> "KeyFrameMark":
        return KeyFrameMark(int(d["frame"]), KeyFrameKind(d["kind"]))


@dataclass(frozen=True)
class SessionManifest:
    """Describes one video session stored as a directory of PNG frames."""

    session_id: str
    frame_count: int
    fps: float
    frame_width: int
    frame_height: int
    frame_source: str

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValidationError(f"frame_count must be >= 1, got {self.frame_count}")

    def frame_path(self, index: int) -> Path:
        return Path(self.frame_source) / FRAME_NAME_PATTERN.format(index)

    def missing_frames(self) -> list[int]:
        return [i for i in range(self.frame_count) if not self.frame_path(i).is_file()]

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "frame_count": self.frame_count,
            "fps": self.fps,
            "frame_width": self.frame_width,
            "frame_height": self.frame_height,
            "frame_source": self.frame_source,
        }

    @staticmethod
    def from_dict(d: dict) -> "SessionManifest":
        return SessionManifest(
            session_id=d["session_id"],
            frame_count=int(d["frame_count"]),
            fps=float(d["fps"]),
            frame_width=int(d["frame_width"]),
            frame_height=int(d["frame_height"]),
            frame_source=d["frame_source"],
        )


@dataclass(frozen=True)
class DetectionSet:
    """Per-frame face observations plus the frames actually sent to the detector.

    ``observations`` maps frame index to the observations on that frame.
    ``errors`` records frames that could not be read (treated as zero
    detections).
    """

    session_id: str
    observations: dict[int, tuple[FaceObservation, ...]] = field(default_factory=dict)
    sampled_frames: tuple[int, ...] = ()
    errors: tuple[tuple[int, str], ...] = ()

    def all_observations(self) -> list[FaceObservation]:
        out: list[FaceObservation] = []
        for frame in sorted(self.observations):
            out.extend(self.observations[frame])
        return out

    def frames_with_boxes(self) -> set[int]:
        return {f for f, obs in self.observations.items() if obs}

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "sampled_frames": list(self.sampled_frames),
            "observations": {
                str(f): [o.to_dict() for o in obs]
                for f, obs in sorted(self.observations.items())
            },
            "errors": [[f, msg] for f, msg in self.errors],
        }

    @staticmethod
    def from_dict(d: dict) -> "DetectionSet":
        return DetectionSet(
            session_id=d["session_id"],
            observations={
                int(f): tuple(FaceObservation.from_dict(o) for o in obs)
                for f, obs in d.get("observations", {}).items()
            },
            sampled_frames=tuple(int(f) for f in d.get("sampled_frames", [])),
            errors=tuple((int(f), str(m)) for f, m in d.get("errors", [])),
        )


@dataclass(frozen=True)
class PassState:
    """Completion flags for the four annotation passes."""

    pass1: bool = False
    pass2: bool = False
    pass3: bool = False
    pass4: bool = False

    def completed(self, k: int) -> bool:
        return getattr(self, f"pass{k}")

    def with_pass(self, k: int, done: bool) -> "PassState":
        return replace(self, **{f"pass{k}": done})

    def to_dict(self) -> dict:
        return {"pass1": self.pass1, "pass2": self.pass2, "pass3": self.pass3, "pass4": self.pass4}

    @staticmethod
    def from_dict(d: dict) -> "PassState":
        return PassState(bool(d["pass1"]), bool(d["pass2"]), bool(d["pass3"]), bool(d["pass4"]))


@dataclass(frozen=True)
class AnnotationSession:
    """Full per-video annotation state.

    ``revision`` strictly increases on every mutating engine operation and
    doubles as the optimistic-concurrency token for the UI.
    ``final_track`` is the pass-4 output: exactly one key-subject box per
    frame inside the presence regions.
    """

    manifest: SessionManifest
    detections: DetectionSet
    regions: tuple[PresenceRegion, ...] = ()
    keyframes: tuple[KeyFrameMark, ...] = ()
    chains: tuple[FaceChain, ...] = ()
    manual_boxes: tuple[FaceObservation, ...] = ()
    final_track: tuple[FaceObservation, ...] = ()
    pass_state: PassState = PassState()
    revision: int = 0

    def __post_init__(self):
        validate_regions(self.regions)

    def chain_by_id(self, chain_id: str) -> Optional[FaceChain]:
        for c in self.chains:
            if c.id == chain_id:
                return c
        return None

    def frame_in_regions(self, frame: int) -> bool:
        return any(frame in r for r in self.regions)

    def region_frame_count(self) -> int:
        return sum(r.end_frame - r.start_frame + 1 for r in self.regions)


def session_to_dict(session: AnnotationSession) -> dict:
    return {
        "format_version": SESSION_FORMAT_VERSION,
        "session_id": session.manifest.session_id,
        "manifest": session.manifest.to_dict(),
        "detections": session.detections.to_dict(),
        "regions": [r.to_dict() for r in session.regions],
        "keyframes": [k.to_dict() for k in session.keyframes],
        "chains": [c.to_dict() for c in session.chains],
        "manual_boxes": [o.to_dict() for o in session.manual_boxes],
        "final_track": [o.to_dict() for o in session.final_track],
        "pass_state": session.pass_state.to_dict(),
        "revision": session.revision,
    }


def session_from_dict(d: dict) -> AnnotationSession:
    try:
        return AnnotationSession(
            manifest=SessionManifest.from_dict(d["manifest"]),
            detections=DetectionSet.from_dict(d["detections"]),
            regions=tuple(PresenceRegion.from_dict(r) for r in d["regions"]),
            keyframes=tuple(KeyFrameMark.from_dict(k) for k in d["keyframes"]),
            chains=tuple(FaceChain.from_dict(c) for c in d["chains"]),
            manual_boxes=tuple(FaceObservation.from_dict(o) for o in d["manual_boxes"]),
            final_track=tuple(FaceObservation.from_dict(o) for o in d.get("final_track", [])),
            pass_state=PassState.from_dict(d["pass_state"]),
            revision=int(d["revision"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SessionParseError(f"session document malformed: {exc}") from exc


def serialize_session(session: AnnotationSession) -> bytes:
    return json.dumps(session_to_dict(session), indent=2, sort_keys=False).encode("utf-8")


def deserialize_session(data: bytes) -> AnnotationSession:
    try:
        doc = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise SessionParseError(f"not valid UTF-8: {exc}", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise SessionParseError(f"not valid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise SessionParseError("top-level JSON value is not an object")
    return session_from_dict(doc)
