// Annotator session state.  The server snapshot is the only authority:
// every committed change posts through the API, then re-fetches and
// re-renders from the fresh snapshot.  A stale revision never patches
// local state; it raises the conflict prompt instead.

import { ApiClient, RevisionConflictError } from "./api.js";
import { clampFrame, nextKeyframe, prevKeyframe } from "./timeline.js";
import { openPass } from "./passes.js";
import type {
  Box,
  CoverageReport,
  KeyframeKind,
  SessionDoc,
  SubjectTag,
} from "./types.js";

export interface ConflictPrompt {
  active: boolean;
  serverRevision: number;
  detail: string;
}

export class AnnotatorApp {
  session: SessionDoc | null = null;
  coverage: CoverageReport | null = null;
  conflict: ConflictPrompt = { active: false, serverRevision: -1, detail: "" };
  lastError = "";
  currentFrame = 0;
  private listeners: (() => void)[] = [];

  constructor(
    public api: ApiClient,
    public sessionId: string,
  ) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  get revision(): number {
    return this.session?.revision ?? -1;
  }

  get frameCount(): number {
    return this.session?.manifest.frame_count ?? 0;
  }

  get openPass(): number | null {
    return this.session ? openPass(this.session.pass_state) : null;
  }

  async load(): Promise<SessionDoc> {
    this.session = await this.api.getSession(this.sessionId);
    if (this.session.pass_state.pass4) {
      this.coverage = await this.api.getCoverage(this.sessionId);
    } else {
      this.coverage = null;
    }
    this.emit();
    return this.session;
  }

  /** Reload after a conflict prompt; clears the prompt. */
  async resolveConflict(): Promise<void> {
    this.conflict = { active: false, serverRevision: -1, detail: "" };
    await this.load();
  }

  private async commit<T>(fn: (revision: number) => Promise<T>): Promise<T | null> {
    if (!this.session) throw new Error("no session loaded");
    this.lastError = "";
    try {
      const result = await fn(this.session.revision);
      await this.load();
      return result;
    } catch (err) {
      if (err instanceof RevisionConflictError) {
        this.conflict = {
          active: true,
          serverRevision: err.currentRevision,
          detail: err.detail,
        };
        this.emit();
        return null;
      }
      this.lastError = err instanceof Error ? err.message : String(err);
      this.emit();
      throw err;
    }
  }

  // -- navigation ------------------------------------------------------------

  scrubTo(frame: number): void {
    this.currentFrame = clampFrame(frame, this.frameCount);
    this.emit();
  }

  jumpNextKeyframe(): void {
    if (!this.session) return;
    const f = nextKeyframe(this.session.keyframes, this.currentFrame);
    if (f !== null) this.scrubTo(f);
  }

  jumpPrevKeyframe(): void {
    if (!this.session) return;
    const f = prevKeyframe(this.session.keyframes, this.currentFrame);
    if (f !== null) this.scrubTo(f);
  }

  // -- pass 1 ------------------------------------------------------------------

  async toggleKeyframe(kind: KeyframeKind, frame: number): Promise<void> {
    const existing = this.session?.keyframes.some(
      (m) => m.kind === kind && m.frame === frame,
    );
    await this.commit((rev) =>
      this.api.postKeyframe(this.sessionId, rev, kind, frame, existing),
    );
  }

  // -- pass 2 --------------------------------------------------------------------

  async tagChain(chainId: string, tag: SubjectTag): Promise<void> {
    await this.commit((rev) => this.api.tagChain(this.sessionId, chainId, rev, tag));
  }

  // -- pass 3 ----------------------------------------------------------------------

  async addBox(frame: number, box: Box): Promise<void> {
    await this.commit((rev) => this.api.addBox(this.sessionId, rev, frame, box));
  }

  // -- pass control ------------------------------------------------------------------

  async completePass(pass: number): Promise<void> {
    await this.commit((rev) => this.api.completePass(this.sessionId, pass, rev));
  }

  async reopenPass(pass: number): Promise<void> {
    await this.commit((rev) => this.api.reopenPass(this.sessionId, pass, rev));
  }

  async runPass4(): Promise<CoverageReport | null> {
    const result = await this.commit((rev) => this.api.runPass4(this.sessionId, rev));
    return result?.coverage ?? this.coverage;
  }

  /** Percentage strings for the coverage panel. */
  coveragePanel(): { before: string; after: string } | null {
    if (!this.coverage) return null;
    return {
      before: `${(this.coverage.rate_before * 100).toFixed(2)}%`,
      after: `${(this.coverage.rate_after * 100).toFixed(2)}%`,
    };
  }
}
