// Typed client for the gateway HTTP API.  Every mutation echoes the
// caller's last-seen revision; a 409 surfaces as RevisionConflictError so
// the UI can prompt for a reload instead of silently clobbering state.

import type {
  Box,
  CoverageReport,
  KeyframeKind,
  PassState,
  SessionDoc,
  SessionSummary,
  SubjectTag,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    public status: number,
    public detail: string,
  ) {
    super(message);
  }
}

export class RevisionConflictError extends ApiError {
  constructor(
    detail: string,
    public currentRevision: number,
  ) {
    super(`revision conflict: ${detail}`, 409, detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    public baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  frameUrl(sessionId: string, frame: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/frames/${frame}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    let body: any = null;
    const text = await resp.text();
    if (text) {
      try {
        body = JSON.parse(text);
      } catch {
        body = { detail: text };
      }
    }
    if (resp.status === 409) {
      throw new RevisionConflictError(
        body?.detail ?? "stale revision",
        body?.current_revision ?? -1,
      );
    }
    if (!resp.ok) {
      throw new ApiError(
        `${init?.method ?? "GET"} ${path} -> ${resp.status}`,
        resp.status,
        body?.detail ?? "",
      );
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async listSessions(): Promise<SessionSummary[]> {
    const body = await this.request<{ sessions: SessionSummary[] }>("/sessions");
    return body.sessions;
  }

  getSession(sessionId: string): Promise<SessionDoc> {
    return this.request<SessionDoc>(`/sessions/${sessionId}`);
  }

  postKeyframe(
    sessionId: string,
    revision: number,
    kind: KeyframeKind,
    frame: number,
    remove = false,
  ): Promise<{ revision: number }> {
    return this.post(`/sessions/${sessionId}/keyframes`, {
      revision,
      kind,
      frame,
      remove,
    });
  }

  tagChain(
    sessionId: string,
    chainId: string,
    revision: number,
    tag: SubjectTag,
  ): Promise<{ revision: number }> {
    return this.post(`/sessions/${sessionId}/chains/${chainId}/tag`, {
      revision,
      tag,
    });
  }

  addBox(
    sessionId: string,
    revision: number,
    frame: number,
    box: Box,
  ): Promise<{ revision: number }> {
    return this.post(`/sessions/${sessionId}/boxes`, { revision, frame, box });
  }

  completePass(
    sessionId: string,
    pass: number,
    revision: number,
  ): Promise<{ revision: number; pass_state: PassState }> {
    return this.post(`/sessions/${sessionId}/passes/${pass}/complete`, { revision });
  }

  reopenPass(
    sessionId: string,
    pass: number,
    revision: number,
  ): Promise<{ revision: number; pass_state: PassState }> {
    return this.post(`/sessions/${sessionId}/passes/${pass}/reopen`, { revision });
  }

  runPass4(
    sessionId: string,
    revision: number,
  ): Promise<{ revision: number; coverage: CoverageReport }> {
    return this.post(`/sessions/${sessionId}/passes/4/run`, { revision });
  }

  async getCoverage(sessionId: string): Promise<CoverageReport> {
    const body = await this.request<{ coverage: CoverageReport }>(
      `/sessions/${sessionId}/coverage`,
    );
    return body.coverage;
  }
}
