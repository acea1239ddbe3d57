// Frame overlays: which boxes to draw at a frame and how each provenance
// renders.  Selection logic is pure; only drawOverlay touches the canvas.

import type { Observation, Provenance, SessionDoc, SubjectTag } from "./types.js";

export interface OverlayBox {
  box: { x: number; y: number; w: number; h: number };
  provenance: Provenance;
  source: "detection" | "chain" | "manual" | "track";
  chainId: string | null;
  tag: SubjectTag | null;
}

export interface OverlayStyle {
  color: string;
  dash: number[];
  width: number;
}

// detected = solid, manual = thick solid, interpolated = dashed
export const PROVENANCE_STYLE: Record<Provenance, OverlayStyle> = {
  detected: { color: "#3fa7ff", dash: [], width: 2 },
  manual: { color: "#ffd23f", dash: [], width: 3 },
  interpolated: { color: "#9f7fff", dash: [6, 4], width: 2 },
};

export const TAG_COLOR: Record<SubjectTag, string> = {
  untagged: "#3fa7ff",
  key_subject: "#45d48a",
  other: "#ff6b6b",
};

export function styleFor(entry: OverlayBox): OverlayStyle {
  const base = PROVENANCE_STYLE[entry.provenance];
  if (entry.source === "chain" && entry.tag) {
    return { ...base, color: TAG_COLOR[entry.tag] };
  }
  return base;
}

/** Boxes to draw at one frame, chain boxes first, then manual, then the
 * pass-4 track (if present). */
export function overlaysForFrame(doc: SessionDoc, frame: number): OverlayBox[] {
  const out: OverlayBox[] = [];
  const chainMember = new Set<string>();
  for (const chain of doc.chains) {
    for (const obs of chain.observations) {
      if (obs.frame === frame) {
        chainMember.add(obsKey(obs));
        out.push({
          box: obs.box,
          provenance: obs.provenance,
          source: "chain",
          chainId: chain.id,
          tag: chain.subject_tag,
        });
      }
    }
  }
  // raw detections not absorbed into any chain yet (pre-pass-1 view)
  const raw = doc.detections.observations[String(frame)] ?? [];
  for (const obs of raw) {
    if (!chainMember.has(obsKey(obs))) {
      out.push({
        box: obs.box,
        provenance: obs.provenance,
        source: "detection",
        chainId: obs.chain_id,
        tag: null,
      });
    }
  }
  for (const obs of doc.manual_boxes) {
    if (obs.frame === frame) {
      out.push({
        box: obs.box,
        provenance: "manual",
        source: "manual",
        chainId: null,
        tag: null,
      });
    }
  }
  for (const obs of doc.final_track) {
    if (obs.frame === frame) {
      out.push({
        box: obs.box,
        provenance: obs.provenance,
        source: "track",
        chainId: obs.chain_id,
        tag: null,
      });
    }
  }
  return out;
}

function obsKey(obs: Observation): string {
  return `${obs.frame}:${obs.box.x}:${obs.box.y}:${obs.box.w}:${obs.box.h}:${obs.provenance}`;
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  entries: OverlayBox[],
  scale = 1,
): void {
  for (const entry of entries) {
    const style = styleFor(entry);
    ctx.save();
    ctx.strokeStyle = style.color;
    ctx.lineWidth = style.width;
    ctx.setLineDash(style.dash);
    if (entry.source === "track") ctx.globalAlpha = 0.9;
    ctx.strokeRect(
      entry.box.x * scale,
      entry.box.y * scale,
      entry.box.w * scale,
      entry.box.h * scale,
    );
    if (entry.chainId) {
      ctx.setLineDash([]);
      ctx.font = "11px sans-serif";
      ctx.fillStyle = style.color;
      ctx.fillText(entry.chainId, entry.box.x * scale + 2, entry.box.y * scale - 3);
    }
    ctx.restore();
  }
}
