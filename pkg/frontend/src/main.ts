// DOM wiring for the annotator.  Hotkey-first: arrows scrub, n/p jump
// keyframes, e/l drop enter/leave marks, k/o tag the selected chain,
// drag draws a pass-3 box, shift+Enter completes the open pass.

import { AnnotatorApp } from "./app.js";
import { ApiClient } from "./api.js";
import { drawOverlay, overlaysForFrame } from "./overlay.js";
import { passRows } from "./passes.js";
import { prefetchWindow, tickPositions } from "./timeline.js";
import type { SubjectTag } from "./types.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class FrameCache {
  private images = new Map<number, HTMLImageElement>();

  constructor(
    private app: AnnotatorApp,
    private maxEntries = 48,
  ) {}

  get(frame: number): HTMLImageElement {
    let img = this.images.get(frame);
    if (!img) {
      img = new Image();
      img.src = this.app.api.frameUrl(this.app.sessionId, frame);
      this.images.set(frame, img);
      if (this.images.size > this.maxEntries) {
        const oldest = this.images.keys().next().value as number;
        this.images.delete(oldest);
      }
    }
    return img;
  }

  prefetch(current: number, frameCount: number): void {
    for (const f of prefetchWindow(current, frameCount)) this.get(f);
  }
}

async function pickSession(): Promise<string> {
  const fromHash = window.location.hash.replace(/^#/, "");
  if (fromHash) return fromHash;
  const sessions = await api.listSessions();
  if (!sessions.length) throw new Error("no sessions in the store");
  return sessions[0]!.session_id;
}

async function boot(): Promise<void> {
  const sessionId = await pickSession();
  const app = new AnnotatorApp(api, sessionId);
  const cache = new FrameCache(app);

  const canvas = el<HTMLCanvasElement>("frame-canvas");
  const ctx = canvas.getContext("2d")!;
  const slider = el<HTMLInputElement>("timeline");
  const ticks = el<HTMLDivElement>("ticks");
  const frameLabel = el<HTMLSpanElement>("frame-label");
  const passPanel = el<HTMLDivElement>("pass-panel");
  const chainList = el<HTMLDivElement>("chain-list");
  const coveragePanel = el<HTMLDivElement>("coverage-panel");
  const conflictBanner = el<HTMLDivElement>("conflict-banner");
  const errorBar = el<HTMLDivElement>("error-bar");
  let selectedChain: string | null = null;
  let dragStart: { x: number; y: number } | null = null;
  let dragNow: { x: number; y: number } | null = null;

  function canvasScale(): number {
    return canvas.width / (app.session?.manifest.frame_width ?? canvas.width);
  }

  function renderFrame(): void {
    const doc = app.session;
    if (!doc) return;
    const img = cache.get(app.currentFrame);
    const draw = () => {
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
      drawOverlay(ctx, overlaysForFrame(doc, app.currentFrame), canvasScale());
      if (dragStart && dragNow) {
        ctx.save();
        ctx.strokeStyle = "#ffd23f";
        ctx.setLineDash([4, 3]);
        ctx.strokeRect(
          Math.min(dragStart.x, dragNow.x),
          Math.min(dragStart.y, dragNow.y),
          Math.abs(dragNow.x - dragStart.x),
          Math.abs(dragNow.y - dragStart.y),
        );
        ctx.restore();
      }
    };
    if (img.complete) draw();
    else img.onload = draw;
    cache.prefetch(app.currentFrame, app.frameCount);
  }

  function renderChrome(): void {
    const doc = app.session;
    if (!doc) return;
    canvas.width = 960;
    canvas.height = Math.round(
      (doc.manifest.frame_height / doc.manifest.frame_width) * 960,
    );
    slider.max = String(doc.manifest.frame_count - 1);
    slider.value = String(app.currentFrame);
    frameLabel.textContent =
      `frame ${app.currentFrame} / ${doc.manifest.frame_count - 1} ` +
      `(rev ${doc.revision})`;

    ticks.innerHTML = "";
    for (const t of tickPositions(doc.keyframes, doc.manifest.frame_count,
                                  ticks.clientWidth || 960)) {
      const tick = document.createElement("div");
      tick.className = "tick";
      tick.style.left = `${t.x}px`;
      tick.title = `keyframe ${t.frame}`;
      tick.onclick = () => app.scrubTo(t.frame);
      ticks.appendChild(tick);
    }

    passPanel.innerHTML = "";
    for (const row of passRows(doc.pass_state)) {
      const div = document.createElement("div");
      div.className = `pass ${row.complete ? "done" : row.open ? "open" : "pending"}`;
      const status = row.complete ? "done" : row.open ? "open" : "-";
      div.textContent = `pass ${row.pass}: ${row.label} [${status}] `;
      if (row.open && row.pass < 4) {
        const btn = document.createElement("button");
        btn.textContent = "complete";
        btn.onclick = () => void app.completePass(row.pass);
        div.appendChild(btn);
      }
      if (row.open && row.pass === 4) {
        const btn = document.createElement("button");
        btn.textContent = "run interpolation";
        btn.onclick = () => void app.runPass4();
        div.appendChild(btn);
      }
      if (row.complete) {
        const btn = document.createElement("button");
        btn.textContent = "reopen";
        btn.onclick = () => void app.reopenPass(row.pass);
        div.appendChild(btn);
      }
      passPanel.appendChild(div);
    }

    chainList.innerHTML = "";
    for (const summary of doc.chain_summaries) {
      const row = document.createElement("div");
      row.className =
        `chain ${summary.subject_tag}` +
        (summary.id === selectedChain ? " selected" : "");
      row.textContent =
        `${summary.id} [${summary.subject_tag}] ` +
        `${summary.start_frame}..${summary.end_frame} (${summary.observations})`;
      row.onclick = () => {
        selectedChain = summary.id;
        app.scrubTo(summary.start_frame);
      };
      chainList.appendChild(row);
    }

    const cov = app.coveragePanel();
    coveragePanel.textContent = cov
      ? `coverage: ${cov.before} detected -> ${cov.after} after interpolation`
      : "coverage: run pass 4";

    conflictBanner.classList.toggle("hidden", !app.conflict.active);
    if (app.conflict.active) {
      el<HTMLSpanElement>("conflict-detail").textContent =
        `server is at revision ${app.conflict.serverRevision}`;
    }
    errorBar.textContent = app.lastError;
    errorBar.classList.toggle("hidden", !app.lastError);
  }

  app.onChange(() => {
    renderChrome();
    renderFrame();
  });

  slider.oninput = () => app.scrubTo(Number(slider.value));
  el<HTMLButtonElement>("reload-btn").onclick = () => void app.resolveConflict();

  canvas.onmousedown = (ev) => {
    if (app.openPass !== 3) return;
    const rect = canvas.getBoundingClientRect();
    dragStart = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  };
  canvas.onmousemove = (ev) => {
    if (!dragStart) return;
    const rect = canvas.getBoundingClientRect();
    dragNow = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
    renderFrame();
  };
  canvas.onmouseup = (ev) => {
    if (!dragStart) return;
    const rect = canvas.getBoundingClientRect();
    const end = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
    const scale = canvasScale();
    const box = {
      x: Math.round(Math.min(dragStart.x, end.x) / scale),
      y: Math.round(Math.min(dragStart.y, end.y) / scale),
      w: Math.max(1, Math.round(Math.abs(end.x - dragStart.x) / scale)),
      h: Math.max(1, Math.round(Math.abs(end.y - dragStart.y) / scale)),
    };
    dragStart = dragNow = null;
    void app.addBox(app.currentFrame, box);
  };

  window.addEventListener("keydown", (ev) => {
    if (ev.target instanceof HTMLInputElement) return;
    const tagSelected = (tag: SubjectTag) => {
      if (selectedChain) void app.tagChain(selectedChain, tag);
    };
    switch (ev.key) {
      case "ArrowRight": app.scrubTo(app.currentFrame + (ev.shiftKey ? 10 : 1)); break;
      case "ArrowLeft": app.scrubTo(app.currentFrame - (ev.shiftKey ? 10 : 1)); break;
      case "n": app.jumpNextKeyframe(); break;
      case "p": app.jumpPrevKeyframe(); break;
      case "e": void app.toggleKeyframe("subject_enter", app.currentFrame); break;
      case "l": void app.toggleKeyframe("subject_leave", app.currentFrame); break;
      case "k": tagSelected("key_subject"); break;
      case "o": tagSelected("other"); break;
      case "Enter":
        if (ev.shiftKey && app.openPass) {
          void (app.openPass === 4 ? app.runPass4() : app.completePass(app.openPass));
        }
        break;
    }
  });

  await app.load();
}

boot().catch((err) => {
  document.body.innerHTML = `<pre class="fatal">${String(err)}</pre>`;
});
