"""Sparse face detection orchestration and densification.

The detector itself is an external adapter; this module decides which
frames to send (every Nth plus the final frame), drops low-confidence
boxes, and fills the skipped frames by matching detections between
consecutive sampled frames and linearly interpolating the matches.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Union

from .core import (
    BoxGeom,
    DetectionSet,
    FaceObservation,
    PresenceRegion,
    Provenance,
    SessionManifest,
    ValidationError,
    center_distance,
    lerp_observation,
    round_half_up,
)


@dataclass(frozen=True)
class DetectorConfig:
    """Sampling stride and the gates applied to detector output."""

    stride: int = 10
    match_max_center_distance: float = 0.5  # fraction of mean box diagonal
    min_confidence: float = 0.0

    def __post_init__(self):
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        if self.match_max_center_distance <= 0:
            raise ValidationError("match_max_center_distance must be positive")
        if not (0.0 <= self.min_confidence <= 1.0):
            raise ValidationError("min_confidence must lie in [0,1]")


def sampled_frame_indices(frame_count: int, stride: int) -> list[int]:
    """Frames sent to the detector: 0, stride, 2*stride, ... plus the final
    frame so densification always has a right endpoint."""
    frames = list(range(0, frame_count, stride))
    if frames[-1] != frame_count - 1:
        frames.append(frame_count - 1)
    return frames


def _box_from_raw(raw: dict, frame_w: int, frame_h: int) -> tuple[BoxGeom, float] | None:
    x = round_half_up(float(raw["x"]))
    y = round_half_up(float(raw["y"]))
    w = round_half_up(float(raw["w"]))
    h = round_half_up(float(raw["h"]))
    conf = float(raw.get("confidence", 1.0))
    if w < 1 or h < 1:
        return None
    box = BoxGeom(max(x, 0), max(y, 0), w, h).clamped(frame_w, frame_h)
    if box is None:
        return None
    return box, min(max(conf, 0.0), 1.0)


def run_sparse_detection(
    manifest: SessionManifest,
    config: DetectorConfig,
    adapter,
    parallelism: int = 4,
) -> DetectionSet:
    """Invoke the detector adapter on the sampled frames only.

    Unreadable frame files are recorded in ``errors`` and treated as zero
    detections; adapter protocol violations propagate as fatal errors.
    """
    frames = sampled_frame_indices(manifest.frame_count, config.stride)
    observations: dict[int, tuple[FaceObservation, ...]] = {}
    errors: list[tuple[int, str]] = []

    def detect_one(frame: int):
        path = manifest.frame_path(frame)
        if not path.is_file():
            return frame, None, f"frame file not readable: {path}"
        echoed, raw_boxes = adapter.detect(frame, str(path))
        return echoed, raw_boxes, None

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(detect_one, frames))

    valid = set(frames)
    for frame, raw_boxes, err in results:
        if err is not None:
            errors.append((frame, err))
            continue
        if frame not in valid:
            raise ValidationError(f"adapter echoed unsampled frame index {frame}")
        obs = []
        for raw in raw_boxes:
            parsed = _box_from_raw(raw, manifest.frame_width, manifest.frame_height)
            if parsed is None:
                continue
            box, conf = parsed
            if conf < config.min_confidence:
                continue
            obs.append(FaceObservation(frame=frame, box=box, confidence=conf,
                                       provenance=Provenance.DETECTED))
        if obs:
            observations[frame] = tuple(obs)

    return DetectionSet(
        session_id=manifest.session_id,
        observations=observations,
        sampled_frames=tuple(frames),
        errors=tuple(sorted(errors)),
    )


def greedy_match(
    left: list[FaceObservation],
    right: list[FaceObservation],
    max_center_frac: float,
) -> list[tuple[int, int]]:
    """Greedy nearest-center matching with a mean-diagonal distance gate.

    Candidate pairs are taken by ascending center distance; ties break on
    the left-frame detection index, then the right index.  Each detection
    matches at most once.
    """
    candidates = []
    for i, a in enumerate(left):
        for j, b in enumerate(right):
            dist = center_distance(a.box, b.box)
            gate = max_center_frac * (a.box.diagonal + b.box.diagonal) / 2.0
            if dist <= gate:
                candidates.append((dist, i, j))
    candidates.sort()
    used_left: set[int] = set()
    used_right: set[int] = set()
    matches = []
    for _, i, j in candidates:
        if i in used_left or j in used_right:
            continue
        used_left.add(i)
        used_right.add(j)
        matches.append((i, j))
    return matches


def densify(sparse: DetectionSet, config: DetectorConfig) -> DetectionSet:
    """Interpolate matched detections across the skipped frames.

    Detected observations pass through unchanged; unmatched detections
    contribute nothing between sampled frames.
    """
    for obs_list in sparse.observations.values():
        for o in obs_list:
            if o.provenance != Provenance.DETECTED:
                raise ValidationError(
                    f"densify input must contain only detected observations; "
                    f"frame {o.frame} has provenance {o.provenance.value}"
                )

    dense: dict[int, list[FaceObservation]] = {
        f: list(obs) for f, obs in sparse.observations.items()
    }
    sampled = sorted(sparse.sampled_frames)
    for s, s_next in zip(sampled, sampled[1:]):
        left = list(sparse.observations.get(s, ()))
        right = list(sparse.observations.get(s_next, ()))
        if not left or not right or s_next - s < 2:
            continue
        for i, j in greedy_match(left, right, config.match_max_center_distance):
            for frame in range(s + 1, s_next):
                dense.setdefault(frame, []).append(lerp_observation(left[i], right[j], frame))

    return DetectionSet(
        session_id=sparse.session_id,
        observations={f: tuple(obs) for f, obs in dense.items() if obs},
        sampled_frames=sparse.sampled_frames,
        errors=sparse.errors,
    )


Covered = Union[DetectionSet, Iterable[Union[int, FaceObservation]]]


def detection_rate(covered: Covered, regions: Iterable[PresenceRegion]) -> float:
    """Fraction of region frames carrying at least one observation.

    An empty region list covers zero frames and counts as rate 1.0
    (vacuous coverage).
    """
    if isinstance(covered, DetectionSet):
        frames = covered.frames_with_boxes()
    else:
        frames = set()
        for item in covered:
            frames.add(item.frame if isinstance(item, FaceObservation) else int(item))

    total = 0
    hit = 0
    for region in regions:
        for f in region.frames():
            total += 1
            if f in frames:
                hit += 1
    if total == 0:
        return 1.0
    return hit / total
