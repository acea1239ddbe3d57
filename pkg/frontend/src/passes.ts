// Pass workflow helpers: which pass is open, and what each pass allows.

import type { PassState } from "./types.js";

export const PASS_LABELS: Record<number, string> = {
  1: "Presence regions",
  2: "Chain tagging",
  3: "Supplemental boxes",
  4: "Interpolation",
};

/** First incomplete pass (1-4), or null once pass 4 has run. */
export function openPass(state: PassState): number | null {
  if (!state.pass1) return 1;
  if (!state.pass2) return 2;
  if (!state.pass3) return 3;
  if (!state.pass4) return 4;
  return null;
}

export interface PassRow {
  pass: number;
  label: string;
  complete: boolean;
  open: boolean;
}

export function passRows(state: PassState): PassRow[] {
  const current = openPass(state);
  return [1, 2, 3, 4].map((k) => ({
    pass: k,
    label: PASS_LABELS[k]!,
    complete: state[`pass${k}` as keyof PassState],
    open: current === k,
  }));
}

/** Marks the passes whose outputs a reopen of pass k invalidates. */
export function invalidatedBy(k: number): number[] {
  const out: number[] = [];
  for (let p = k; p <= 4; p++) out.push(p);
  return out;
}
