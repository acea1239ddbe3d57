"""Privatized frame rendering: scaled box-filter blur and face-swap compositing.

Blur is computed natively (see kernels); face swapping goes through the
binary swap adapter protocol.  Only pixels inside the target box change;
everything else is bit-identical to the source frame.
"""

from __future__ import annotations

import json
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .adapters import AdapterFailure, ProtocolError, load_image, save_image
from .core import (
    BoxGeom,
    FaceObservation,
    PresenceRegion,
    SessionManifest,
    ValidationError,
    round_half_up,
)

POWERFUL_BLUR_SCALE = 1 / 5
WEAK_BLUR_SCALE = 1 / 15


@dataclass(frozen=True)
class BlurSpec:
    """Blur strength as a fraction of the box perimeter half-sum."""

    scale: float

    def __post_init__(self):
        if not (0 < self.scale <= 1):
            raise ValidationError(f"blur scale must lie in (0, 1], got {self.scale}")


def blur_kernel_size(box: BoxGeom, scale: float) -> int:
    """Kernel side length: ceil((w + h) * scale), at least 1."""
    return max(1, math.ceil((box.w + box.h) * scale))


def blur_region(frame: np.ndarray, box: BoxGeom, spec: BlurSpec) -> np.ndarray:
    """Replace the box interior with its k x k box-filter mean.

    Borders replicate at the box boundary, so no background pixels leak
    into the face statistic; pixels outside the box are untouched.
    """
    fh, fw = frame.shape[:2]
    if box.clamped(fw, fh) != box:
        raise ValidationError(f"box {box.to_dict()} exceeds frame bounds {fw}x{fh}")
    k = blur_kernel_size(box, spec.scale)
    out = frame.copy()
    sub = frame[box.y:box.y + box.h, box.x:box.x + box.w]
    out[box.y:box.y + box.h, box.x:box.x + box.w] = kernels.box_blur(sub, k)
    return out


@dataclass(frozen=True)
class FaceCrop:
    """Pixels of a margin-expanded box, clamped to the frame."""

    frame: int
    source_box: BoxGeom
    pixels: np.ndarray
    margin: float
    realized: BoxGeom  # the clamped region the pixels actually cover

    def __post_init__(self):
        if self.pixels.shape[:2] != (self.realized.h, self.realized.w):
            raise ValidationError(
                f"crop pixels {self.pixels.shape[:2]} do not match realized box "
                f"{self.realized.h}x{self.realized.w}"
            )


def extract_crop(frame: np.ndarray, box: BoxGeom, margin: float, frame_index: int = 0) -> FaceCrop:
    """Crop the box expanded by ``margin`` per side, clamped to the frame."""
    fh, fw = frame.shape[:2]
    mx = round_half_up(box.w * margin)
    my = round_half_up(box.h * margin)
    x0 = box.x - mx
    y0 = box.y - my
    x1 = box.x + box.w + mx
    y1 = box.y + box.h + my
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x1, fw), min(y1, fh)
    if cx1 - cx0 < 1 or cy1 - cy0 < 1:
        raise ValidationError(f"box {box.to_dict()} lies outside the {fw}x{fh} frame")
    realized = BoxGeom(cx0, cy0, cx1 - cx0, cy1 - cy0)
    pixels = np.ascontiguousarray(frame[cy0:cy1, cx0:cx1])
    return FaceCrop(frame=frame_index, source_box=box, pixels=pixels,
                    margin=margin, realized=realized)


def apply_swap(crop: FaceCrop, adapter) -> tuple[np.ndarray, np.ndarray]:
    """Run the swap adapter on a crop; returns (pixels, mask in [0,1])."""
    swapped, mask = adapter.swap(crop.frame, crop.pixels)
    if swapped.shape != crop.pixels.shape or mask.shape != crop.pixels.shape[:2]:
        raise ProtocolError(
            f"swap result {swapped.shape}/{mask.shape} does not match crop "
            f"{crop.pixels.shape}"
        )
    return swapped, mask


def composite(frame: np.ndarray, swapped: np.ndarray, mask: np.ndarray,
              geometry: BoxGeom) -> np.ndarray:
    """Blend a swapped crop back into the frame: mask*swapped + (1-mask)*orig."""
    if swapped.shape[:2] != (geometry.h, geometry.w) or mask.shape != (geometry.h, geometry.w):
        raise ValidationError(
            f"composite geometry mismatch: crop {swapped.shape[:2]}, "
            f"mask {mask.shape}, geometry {geometry.h}x{geometry.w}"
        )
    out = frame.copy()
    region = out[geometry.y:geometry.y + geometry.h,
                 geometry.x:geometry.x + geometry.w].astype(np.float64)
    m = mask[:, :, None]
    blended = m * swapped.astype(np.float64) + (1.0 - m) * region
    out[geometry.y:geometry.y + geometry.h, geometry.x:geometry.x + geometry.w] = (
        np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    )
    return out


@dataclass
class PrivatizeOptions:
    mode: str = "blur"  # "blur" | "swap"
    blur: BlurSpec = field(default_factory=lambda: BlurSpec(POWERFUL_BLUR_SCALE))
    margin: float = 0.0
    swap_fallback: str = "blur"  # "blur" | "passthrough" when the adapter fails
    fallback_blur: BlurSpec = field(default_factory=lambda: BlurSpec(POWERFUL_BLUR_SCALE))
    others_blur: BlurSpec | None = None  # optionally blur non-key faces
    workers: int = 4

    def __post_init__(self):
        if self.mode not in ("blur", "swap"):
            raise ValidationError(f"mode must be blur or swap, got {self.mode!r}")
        if self.swap_fallback not in ("blur", "passthrough"):
            raise ValidationError(f"unknown swap fallback {self.swap_fallback!r}")


def privatize_session(
    manifest: SessionManifest,
    track: list[FaceObservation] | tuple[FaceObservation, ...],
    regions: tuple[PresenceRegion, ...],
    options: PrivatizeOptions,
    out_dir: str | Path,
    adapter=None,
    other_boxes: dict[int, list[BoxGeom]] | None = None,
) -> dict:
    """Render the privatized frame directory.

    Region frames get their key-subject box privatized; frames outside
    the regions are copied byte-for-byte.  Per-frame failures are logged
    and the run continues; the summary reports the failure count.
    """
    if options.mode == "swap" and adapter is None:
        raise ValidationError("swap mode requires an adapter")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    track_by_frame = {o.frame: o for o in track}
    other_boxes = other_boxes or {}
    fw, fh = manifest.frame_width, manifest.frame_height

    def blur_others_into(pixels: np.ndarray, frame_index: int) -> np.ndarray:
        spec = options.others_blur
        if spec is None:
            return pixels
        for other in other_boxes.get(frame_index, []):
            clamped = other.clamped(fw, fh)
            if clamped is not None:
                pixels = blur_region(pixels, clamped, spec)
        return pixels

    def render(frame_index: int) -> dict:
        src = manifest.frame_path(frame_index)
        dst = out_dir / src.name
        inside = any(frame_index in r for r in regions)
        try:
            if not inside:
                if options.others_blur is not None and other_boxes.get(frame_index):
                    save_image(dst, blur_others_into(load_image(src), frame_index))
                    return {"frame": frame_index, "status": "privatized_others"}
                shutil.copyfile(src, dst)
                return {"frame": frame_index, "status": "copied"}
            obs = track_by_frame.get(frame_index)
            if obs is None:
                return {"frame": frame_index, "status": "failed",
                        "detail": "no key-subject box on a region frame"}
            box = obs.box.clamped(fw, fh)
            if box is None:
                return {"frame": frame_index, "status": "failed",
                        "detail": "box entirely outside frame"}
            pixels = load_image(src)
            status, detail = "privatized", None
            if options.mode == "blur":
                pixels = blur_region(pixels, box, options.blur)
            else:
                crop = extract_crop(pixels, box, options.margin, frame_index)
                try:
                    swapped, mask = apply_swap(crop, adapter)
                    pixels = composite(pixels, swapped, mask, crop.realized)
                except (AdapterFailure, ProtocolError) as exc:
                    if options.swap_fallback == "blur":
                        pixels = blur_region(pixels, box, options.fallback_blur)
                        status, detail = "privatized_fallback", str(exc)
                    else:
                        status, detail = "passthrough", str(exc)
            pixels = blur_others_into(pixels, frame_index)
            save_image(dst, pixels)
            entry = {"frame": frame_index, "status": status}
            if detail:
                entry["detail"] = detail
            return entry
        except OSError as exc:
            return {"frame": frame_index, "status": "failed", "detail": str(exc)}

    with ThreadPoolExecutor(max_workers=max(1, options.workers)) as pool:
        entries = list(pool.map(render, range(manifest.frame_count)))

    entries.sort(key=lambda e: e["frame"])
    summary: dict[str, int] = {}
    for e in entries:
        summary[e["status"]] = summary.get(e["status"], 0) + 1
    log = {
        "session_id": manifest.session_id,
        "mode": options.mode,
        "output_dir": str(out_dir),
        "frames": entries,
        "summary": summary,
    }
    (out_dir / "render_log.json").write_text(json.dumps(log, indent=2))
    return log
