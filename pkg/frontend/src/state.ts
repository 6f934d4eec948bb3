/**
 * Pure scoring/view state with the same validation rules the server
 * enforces. Nothing here touches the DOM or the network, so every rule is
 * unit-testable in isolation. The rule strings match the server's 400
 * responses verbatim; the client only pre-empts rejections, it never
 * replaces them.
 */

import type { Preference } from "./types.js";

export type Side = "middle" | "right";

export const SIDES: readonly Side[] = ["middle", "right"];

export const MIN_SCORE = 1;
export const MAX_SCORE = 5;
export const MAX_FLAGGED_SCORE = 2;

export const RULE_CAP = "unacceptable slice caps score at 2";
export const RULE_PREFERENCE_ONLY_WHEN_EQUAL = "preference only when scores equal";
export const RULE_PREFERENCE_REQUIRED_WHEN_EQUAL = "preference required when scores equal";
export const RULE_SCORE_RANGE = "score must be an integer between 1 and 5";

export interface SideState {
  score: number | null;
  flag: boolean;
}

export interface PendingScores {
  middle: SideState;
  right: SideState;
  preference: Preference | null;
}

export interface ViewState {
  caseId: string;
  slices: number;
  z: number;
  activeSide: Side;
  pending: PendingScores;
}

export function emptyPending(): PendingScores {
  return {
    middle: { score: null, flag: false },
    right: { score: null, flag: false },
    preference: null,
  };
}

export function clampZ(z: number, slices: number): number {
  if (!Number.isInteger(slices) || slices < 1) {
    throw new Error(`slice count must be a positive integer, got ${slices}`);
  }
  return Math.min(Math.max(Math.trunc(z), 0), slices - 1);
}

export function withSlice(state: ViewState, z: number): ViewState {
  return { ...state, z: clampZ(z, state.slices) };
}

export function allowedScores(side: SideState): number[] {
  const top = side.flag ? MAX_FLAGGED_SCORE : MAX_SCORE;
  const out: number[] = [];
  for (let s = MIN_SCORE; s <= top; s++) out.push(s);
  return out;
}

/** Drop a preference that is no longer meaningful (scores unset or unequal). */
function normalize(pending: PendingScores): PendingScores {
  if (!preferenceVisible(pending) && pending.preference !== null) {
    return { ...pending, preference: null };
  }
  return pending;
}

export function setScore(pending: PendingScores, side: Side, score: number): PendingScores {
  if (!Number.isInteger(score) || score < MIN_SCORE || score > MAX_SCORE) {
    throw new Error(RULE_SCORE_RANGE);
  }
  if (pending[side].flag && score > MAX_FLAGGED_SCORE) {
    throw new Error(RULE_CAP);
  }
  return normalize({ ...pending, [side]: { ...pending[side], score } });
}

/**
 * Toggling the flag on wipes a score the cap no longer permits; the reader
 * has to re-enter one on the restricted 1..2 picker rather than having a 4
 * silently squashed to 2.
 */
export function toggleFlag(pending: PendingScores, side: Side): PendingScores {
  const flag = !pending[side].flag;
  let score = pending[side].score;
  if (flag && score !== null && score > MAX_FLAGGED_SCORE) {
    score = null;
  }
  return normalize({ ...pending, [side]: { score, flag } });
}

export function setPreference(pending: PendingScores, preference: Preference | null): PendingScores {
  if (preference !== null && !preferenceVisible(pending)) {
    throw new Error(RULE_PREFERENCE_ONLY_WHEN_EQUAL);
  }
  return { ...pending, preference };
}

export function preferenceVisible(pending: PendingScores): boolean {
  return (
    pending.middle.score !== null &&
    pending.right.score !== null &&
    pending.middle.score === pending.right.score
  );
}

/**
 * The first violated rule for a would-be submission, or null when the
 * record would be accepted. Incomplete entries are reported too so the UI
 * has a single source for why submit is disabled.
 */
export function submitBlocker(pending: PendingScores): string | null {
  for (const side of SIDES) {
    const s = pending[side];
    if (s.score === null) return `${side} score not entered`;
    if (!Number.isInteger(s.score) || s.score < MIN_SCORE || s.score > MAX_SCORE) {
      return RULE_SCORE_RANGE;
    }
    if (s.flag && s.score > MAX_FLAGGED_SCORE) return RULE_CAP;
  }
  const equal = pending.middle.score === pending.right.score;
  if (equal && pending.preference === null) return RULE_PREFERENCE_REQUIRED_WHEN_EQUAL;
  if (!equal && pending.preference !== null) return RULE_PREFERENCE_ONLY_WHEN_EQUAL;
  return null;
}

export function canSubmit(pending: PendingScores): boolean {
  return submitBlocker(pending) === null;
}
