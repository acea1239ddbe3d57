// Timeline navigation: frame clamping and keyframe jumps.  Pure functions
// so the hotkey handlers stay trivially testable.

import type { KeyframeMark } from "./types.js";

export function clampFrame(frame: number, frameCount: number): number {
  if (!Number.isFinite(frame)) return 0;
  return Math.min(Math.max(Math.round(frame), 0), frameCount - 1);
}

export function keyframeFrames(marks: KeyframeMark[]): number[] {
  return [...new Set(marks.map((m) => m.frame))].sort((a, b) => a - b);
}

/** Smallest keyframe strictly after `current`, or null. */
export function nextKeyframe(marks: KeyframeMark[], current: number): number | null {
  for (const f of keyframeFrames(marks)) {
    if (f > current) return f;
  }
  return null;
}

/** Largest keyframe strictly before `current`, or null. */
export function prevKeyframe(marks: KeyframeMark[], current: number): number | null {
  const frames = keyframeFrames(marks);
  for (let i = frames.length - 1; i >= 0; i--) {
    const f = frames[i]!;
    if (f < current) return f;
  }
  return null;
}

/** Tick x-positions (pixels) for rendering keyframes on a timeline strip. */
export function tickPositions(
  marks: KeyframeMark[],
  frameCount: number,
  widthPx: number,
): { frame: number; x: number }[] {
  if (frameCount <= 1) return keyframeFrames(marks).map((f) => ({ frame: f, x: 0 }));
  return keyframeFrames(marks).map((f) => ({
    frame: f,
    x: (f / (frameCount - 1)) * widthPx,
  }));
}

/** Frames to prefetch around the playhead (small look-ahead cache). */
export function prefetchWindow(
  current: number,
  frameCount: number,
  lookahead = 5,
): number[] {
  const frames: number[] = [];
  for (let d = -2; d <= lookahead; d++) {
    const f = current + d;
    if (f >= 0 && f < frameCount && f !== current) frames.push(f);
  }
  return frames;
}
