// Server wire types, mirroring the gateway's session JSON exactly.

export type Provenance = "detected" | "manual" | "interpolated";
export type SubjectTag = "untagged" | "key_subject" | "other";
export type KeyframeKind =
  | "subject_enter"
  | "subject_leave"
  | "chain_start"
  | "chain_end"
  | "supplemental";

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface Observation {
  frame: number;
  box: Box;
  confidence: number;
  provenance: Provenance;
  chain_id: string | null;
}

export interface Chain {
  id: string;
  subject_tag: SubjectTag;
  observations: Observation[];
}

export interface KeyframeMark {
  frame: number;
  kind: KeyframeKind;
}

export interface Region {
  start_frame: number;
  end_frame: number;
}

export interface PassState {
  pass1: boolean;
  pass2: boolean;
  pass3: boolean;
  pass4: boolean;
}

export interface Manifest {
  session_id: string;
  frame_count: number;
  fps: number;
  frame_width: number;
  frame_height: number;
  frame_source: string;
}

export interface SessionDoc {
  session_id: string;
  manifest: Manifest;
  detections: {
    session_id: string;
    sampled_frames: number[];
    observations: Record<string, Observation[]>;
    errors: [number, string][];
  };
  regions: Region[];
  keyframes: KeyframeMark[];
  chains: Chain[];
  manual_boxes: Observation[];
  final_track: Observation[];
  pass_state: PassState;
  revision: number;
  chain_summaries: ChainSummary[];
}

export interface ChainSummary {
  id: string;
  subject_tag: SubjectTag;
  start_frame: number;
  end_frame: number;
  observations: number;
}

export interface RegionCoverage {
  start_frame: number;
  end_frame: number;
  frames: number;
  covered_before: number;
  covered_after: number;
  rate_before: number;
  rate_after: number;
}

export interface CoverageReport {
  rate_before: number;
  rate_after: number;
  per_region: RegionCoverage[];
}

export interface SessionSummary {
  session_id: string;
  revision: number;
  pass_state: PassState;
  frame_count: number;
}
