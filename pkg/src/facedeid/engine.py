"""Four-pass user-in-the-loop annotation engine.

Pass 1 marks presence regions, pass 2 tags face chains, pass 3 adds
manual boxes, pass 4 interpolates until every region frame carries
exactly one key-subject box.  All operations are pure: they take a
session snapshot and return a new one with ``revision`` bumped by one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .core import (
    AnnotationSession,
    BoxGeom,
    DetectionSet,
    FaceChain,
    FaceDeidError,
    FaceObservation,
    KeyFrameKind,
    KeyFrameMark,
    PresenceRegion,
    Provenance,
    SessionManifest,
    SubjectTag,
    ValidationError,
    center_distance,
    lerp_observation,
)

CHAIN_BOUNDARY_KINDS = (KeyFrameKind.CHAIN_START, KeyFrameKind.CHAIN_END)


class PassStateError(FaceDeidError):
    """Operation attempted while its pass is not open."""


class NotFoundError(FaceDeidError):
    """Referenced entity does not exist."""


class UnresolvableRegionError(FaceDeidError):
    """Pass 4 found presence regions with zero key-subject observations."""

    def __init__(self, regions: list[PresenceRegion]):
        self.regions = regions
        spans = ", ".join(f"[{r.start_frame},{r.end_frame}]" for r in regions)
        super().__init__(
            f"regions without any key-subject box: {spans}; "
            "the annotator must supply at least one box per region"
        )


@dataclass(frozen=True)
class ChainLinkConfig:
    """Linking gates for chain construction (substitutes; config-exposed)."""

    gap_limit: int = 30  # frames; ~0.5 s at 60 fps
    link_max_center_distance: float = 0.75  # fraction of mean box diagonal

    def __post_init__(self):
        if self.gap_limit < 1:
            raise ValidationError(f"gap_limit must be >= 1, got {self.gap_limit}")


def new_session(manifest: SessionManifest, detections: DetectionSet | None = None) -> AnnotationSession:
    return AnnotationSession(
        manifest=manifest,
        detections=detections or DetectionSet(session_id=manifest.session_id),
    )


def _bump(session: AnnotationSession, **changes) -> AnnotationSession:
    return replace(session, revision=session.revision + 1, **changes)


def _require_open(session: AnnotationSession, k: int) -> None:
    ps = session.pass_state
    if ps.completed(k):
        raise PassStateError(f"pass {k} is already complete; reopen it to edit")
    for earlier in range(1, k):
        if not ps.completed(earlier):
            raise PassStateError(f"pass {k} requires pass {earlier} to be complete")


def set_detections(session: AnnotationSession, detections: DetectionSet) -> AnnotationSession:
    return _bump(session, detections=detections)


# -- pass 1: presence marking -------------------------------------------------

def mark_presence(session: AnnotationSession, kind: KeyFrameKind, frame: int) -> AnnotationSession:
    _require_open(session, 1)
    if kind not in (KeyFrameKind.SUBJECT_ENTER, KeyFrameKind.SUBJECT_LEAVE):
        raise ValidationError(f"presence mark kind must be enter/leave, got {kind.value}")
    if not (0 <= frame < session.manifest.frame_count):
        raise ValidationError(
            f"frame {frame} outside [0, {session.manifest.frame_count})"
        )
    mark = KeyFrameMark(frame, kind)
    if mark in session.keyframes:
        return session
    return _bump(session, keyframes=session.keyframes + (mark,))


def unmark_presence(session: AnnotationSession, kind: KeyFrameKind, frame: int) -> AnnotationSession:
    """Remove an enter/leave mark (UI toggle support)."""
    _require_open(session, 1)
    mark = KeyFrameMark(frame, kind)
    if mark not in session.keyframes:
        raise NotFoundError(f"no {kind.value} mark at frame {frame}")
    return _bump(session, keyframes=tuple(m for m in session.keyframes if m != mark))


def compile_presence_regions(marks: list[KeyFrameMark]) -> tuple[PresenceRegion, ...]:
    """Validate alternating enter/leave marks and compile inclusive regions."""
    order = {KeyFrameKind.SUBJECT_ENTER: 0, KeyFrameKind.SUBJECT_LEAVE: 1}
    seq = sorted(
        (m for m in marks if m.kind in order),
        key=lambda m: (m.frame, order[m.kind]),
    )
    regions = []
    pending_enter: KeyFrameMark | None = None
    for mark in seq:
        if mark.kind == KeyFrameKind.SUBJECT_ENTER:
            if pending_enter is not None:
                raise ValidationError(
                    f"two consecutive subject_enter marks at frames "
                    f"{pending_enter.frame} and {mark.frame}"
                )
            pending_enter = mark
        else:
            if pending_enter is None:
                raise ValidationError(f"subject_leave at frame {mark.frame} without a prior enter")
            regions.append(PresenceRegion(pending_enter.frame, mark.frame))
            pending_enter = None
    if pending_enter is not None:
        raise ValidationError(f"subject_enter at frame {pending_enter.frame} never paired with a leave")
    out = tuple(regions)
    for a, b in zip(out, out[1:]):
        if b.start_frame <= a.end_frame:
            raise ValidationError(
                f"presence regions [{a.start_frame},{a.end_frame}] and "
                f"[{b.start_frame},{b.end_frame}] overlap"
            )
    return out


def complete_pass(session: AnnotationSession, k: int) -> AnnotationSession:
    if k not in (1, 2, 3):
        raise PassStateError("only passes 1-3 complete directly; pass 4 completes via its run")
    _require_open(session, k)
    changes: dict = {"pass_state": session.pass_state.with_pass(k, True)}
    if k == 1:
        changes["regions"] = compile_presence_regions(list(session.keyframes))
    return _bump(session, **changes)


def reopen_pass(session: AnnotationSession, k: int) -> AnnotationSession:
    """Reopen pass k for edits; passes k..4 lose completion and the pass-4
    output is discarded."""
    if not 1 <= k <= 4:
        raise ValidationError(f"pass index must be 1..4, got {k}")
    ps = session.pass_state
    for i in range(k, 5):
        ps = ps.with_pass(i, False)
    return _bump(session, pass_state=ps, final_track=())


# -- pass 2: chain construction and tagging -----------------------------------

def _canonical_frame_order(observations) -> list[FaceObservation]:
    return sorted(
        observations,
        key=lambda o: (o.box.x, o.box.y, o.box.w, o.box.h, o.confidence),
    )


def build_chains(session: AnnotationSession, config: ChainLinkConfig) -> AnnotationSession:
    """Partition all detections into face chains by frame-order greedy linking.

    An observation joins the chain whose last member is within the gap
    limit and closest by center distance under the diagonal-scaled gate;
    otherwise it starts a new chain.  Deterministic regardless of the
    input ordering (observations are canonicalized per frame).  Chains
    identical to the previous build keep their subject tags.
    """
    if not session.pass_state.completed(1):
        raise PassStateError("build_chains requires pass 1 to be complete")

    built: list[dict] = []  # {"id", "obs": [FaceObservation...]}
    for frame in sorted(session.detections.observations):
        claimed: set[int] = set()
        for obs in _canonical_frame_order(session.detections.observations[frame]):
            best_idx = -1
            best_dist = 0.0
            for idx, chain in enumerate(built):
                if idx in claimed:
                    continue
                last = chain["obs"][-1]
                if not (0 < frame - last.frame <= config.gap_limit):
                    continue
                dist = center_distance(obs.box, last.box)
                gate = config.link_max_center_distance * (obs.box.diagonal + last.box.diagonal) / 2.0
                if dist > gate:
                    continue
                if best_idx < 0 or dist < best_dist:
                    best_idx = idx
                    best_dist = dist
            if best_idx < 0:
                built.append({"id": f"c{len(built) + 1:04d}", "obs": [obs]})
                claimed.add(len(built) - 1)
            else:
                built[best_idx]["obs"].append(obs)
                claimed.add(best_idx)

    previous = {c.id: c for c in session.chains}
    chains = []
    for item in built:
        cid = item["id"]
        observations = tuple(o.with_chain(cid) for o in item["obs"])
        tag = SubjectTag.UNTAGGED
        old = previous.get(cid)
        if old is not None and old.observations == observations:
            tag = old.subject_tag
        chains.append(FaceChain(id=cid, observations=observations, subject_tag=tag))

    keyframes = [m for m in session.keyframes if m.kind not in CHAIN_BOUNDARY_KINDS]
    for chain in chains:
        keyframes.append(KeyFrameMark(chain.start_frame, KeyFrameKind.CHAIN_START))
        keyframes.append(KeyFrameMark(chain.end_frame, KeyFrameKind.CHAIN_END))

    return _bump(session, chains=tuple(chains), keyframes=tuple(keyframes))


def tag_chain(session: AnnotationSession, chain_id: str, tag: SubjectTag) -> AnnotationSession:
    _require_open(session, 2)
    chain = session.chain_by_id(chain_id)
    if chain is None:
        raise NotFoundError(f"chain {chain_id!r} not found")
    if chain.subject_tag == tag:
        return session
    chains = tuple(replace(c, subject_tag=tag) if c.id == chain_id else c for c in session.chains)
    return _bump(session, chains=chains)


# -- pass 3: supplemental manual boxes ----------------------------------------

def add_manual_box(session: AnnotationSession, frame: int, box: BoxGeom) -> AnnotationSession:
    _require_open(session, 3)
    if not session.frame_in_regions(frame):
        raise ValidationError(f"frame {frame} lies outside every presence region")
    clamped = box.clamped(session.manifest.frame_width, session.manifest.frame_height)
    if clamped is None:
        raise ValidationError(f"box {box.to_dict()} lies entirely outside the frame")
    obs = FaceObservation(frame=frame, box=clamped, confidence=1.0, provenance=Provenance.MANUAL)
    manual = tuple(o for o in session.manual_boxes if o.frame != frame) + (obs,)
    mark = KeyFrameMark(frame, KeyFrameKind.SUPPLEMENTAL)
    keyframes = session.keyframes if mark in session.keyframes else session.keyframes + (mark,)
    return _bump(session, manual_boxes=manual, keyframes=keyframes)


# -- pass 4: interpolation ----------------------------------------------------

_PROVENANCE_PRIORITY = {Provenance.MANUAL: 0, Provenance.DETECTED: 1, Provenance.INTERPOLATED: 2}


def _frame_winner(candidates: list[FaceObservation]) -> FaceObservation:
    """Single box per frame: manual beats detected beats interpolated, then
    higher confidence, then canonical box order."""
    return min(
        candidates,
        key=lambda o: (
            _PROVENANCE_PRIORITY[o.provenance],
            -o.confidence,
            o.box.x, o.box.y, o.box.w, o.box.h,
        ),
    )


def key_subject_candidates(session: AnnotationSession) -> dict[int, FaceObservation]:
    """Best key-subject box per frame from tagged chains plus manual boxes."""
    per_frame: dict[int, list[FaceObservation]] = {}
    for chain in session.chains:
        if chain.subject_tag != SubjectTag.KEY_SUBJECT:
            continue
        for obs in chain.observations:
            per_frame.setdefault(obs.frame, []).append(obs)
    for obs in session.manual_boxes:
        per_frame.setdefault(obs.frame, []).append(obs)
    return {f: _frame_winner(cands) for f, cands in per_frame.items()}


def run_interpolation_pass(session: AnnotationSession) -> tuple[AnnotationSession, dict]:
    """Fill every region frame with a key-subject box.

    Gaps interpolate between the nearest earlier and later boxes within
    the region; one-sided gaps replicate the nearest box.  A region with
    no key-subject box at all is unresolvable and errors.
    """
    for k in (1, 2, 3):
        if not session.pass_state.completed(k):
            raise PassStateError(f"pass 4 requires passes 1-3 complete; pass {k} is not")

    winners = key_subject_candidates(session)
    unresolvable = [
        r for r in session.regions if not any(f in winners for f in r.frames())
    ]
    if unresolvable:
        raise UnresolvableRegionError(unresolvable)

    track: list[FaceObservation] = []
    for region in session.regions:
        known = sorted(f for f in winners if f in region)
        for frame in region.frames():
            if frame in winners:
                track.append(winners[frame])
                continue
            earlier = max((f for f in known if f < frame), default=None)
            later = min((f for f in known if f > frame), default=None)
            if earlier is not None and later is not None:
                track.append(lerp_observation(winners[earlier], winners[later], frame))
            else:
                src = winners[earlier if earlier is not None else later]
                track.append(FaceObservation(
                    frame=frame,
                    box=src.box,
                    confidence=src.confidence,
                    provenance=Provenance.INTERPOLATED,
                ))

    updated = _bump(
        session,
        final_track=tuple(sorted(track, key=lambda o: o.frame)),
        pass_state=session.pass_state.with_pass(4, True),
    )
    return updated, coverage_report(updated)


def coverage_report(session: AnnotationSession) -> dict:
    """Detection-rate accounting before and after manual processing."""
    if not session.pass_state.completed(4):
        raise PassStateError("coverage report requires pass 4 to have run")

    before_frames: set[int] = set()
    for chain in session.chains:
        if chain.subject_tag == SubjectTag.KEY_SUBJECT:
            before_frames.update(o.frame for o in chain.observations)
    after_frames = {o.frame for o in session.final_track}

    per_region = []
    total = covered_before = covered_after = 0
    for region in session.regions:
        n = region.end_frame - region.start_frame + 1
        before = sum(1 for f in region.frames() if f in before_frames)
        after = sum(1 for f in region.frames() if f in after_frames)
        total += n
        covered_before += before
        covered_after += after
        per_region.append({
            "start_frame": region.start_frame,
            "end_frame": region.end_frame,
            "frames": n,
            "covered_before": before,
            "covered_after": after,
            "rate_before": before / n,
            "rate_after": after / n,
        })

    return {
        "rate_before": covered_before / total if total else 1.0,
        "rate_after": covered_after / total if total else 1.0,
        "per_region": per_region,
    }


def export_track_csv(session: AnnotationSession) -> str:
    """Final key-subject track as CSV for downstream tools."""
    lines = ["frame,x,y,w,h,provenance"]
    for o in session.final_track:
        b = o.box
        lines.append(f"{o.frame},{b.x},{b.y},{b.w},{b.h},{o.provenance.value}")
    return "\n".join(lines) + "\n"
