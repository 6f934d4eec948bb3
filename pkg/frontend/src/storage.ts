/**
 * Browser-storage persistence for in-progress scoring, keyed by reader and
 * case so an accidental reload or a shared workstation never loses or mixes
 * entries. Corrupted or shape-incompatible values are discarded rather
 * than trusted.
 */

import type { PendingScores } from "./state.js";
import { MAX_SCORE, MIN_SCORE } from "./state.js";

const PREFIX = "bpequant-reader";

export interface StoredCaseState {
  z: number;
  pending: PendingScores;
}

function isSideState(value: unknown): value is PendingScores["middle"] {
  if (typeof value !== "object" || value === null) return false;
  const side = value as { score?: unknown; flag?: unknown };
  const scoreOk =
    side.score === null ||
    (Number.isInteger(side.score) &&
      (side.score as number) >= MIN_SCORE &&
      (side.score as number) <= MAX_SCORE);
  return scoreOk && typeof side.flag === "boolean";
}

function isStoredCaseState(value: unknown): value is StoredCaseState {
  if (typeof value !== "object" || value === null) return false;
  const candidate = value as { z?: unknown; pending?: unknown };
  if (!Number.isInteger(candidate.z) || (candidate.z as number) < 0) return false;
  const pending = candidate.pending as PendingScores | undefined;
  if (typeof pending !== "object" || pending === null) return false;
  if (!isSideState(pending.middle) || !isSideState(pending.right)) return false;
  return (
    pending.preference === null ||
    pending.preference === "middle" ||
    pending.preference === "right" ||
    pending.preference === "none"
  );
}

export class PendingStore {
  constructor(private readonly backing: Storage = window.localStorage) {}

  private caseKey(readerId: string, caseId: string): string {
    return `${PREFIX}/${readerId}/case/${caseId}`;
  }

  private submittedKey(readerId: string): string {
    return `${PREFIX}/${readerId}/submitted`;
  }

  load(readerId: string, caseId: string): StoredCaseState | null {
    const raw = this.backing.getItem(this.caseKey(readerId, caseId));
    if (raw === null) return null;
    let parsed: unknown;
    try {
      parsed = JSON.parse(raw);
    } catch {
      this.backing.removeItem(this.caseKey(readerId, caseId));
      return null;
    }
    if (!isStoredCaseState(parsed)) {
      this.backing.removeItem(this.caseKey(readerId, caseId));
      return null;
    }
    return parsed;
  }

  save(readerId: string, caseId: string, state: StoredCaseState): void {
    this.backing.setItem(this.caseKey(readerId, caseId), JSON.stringify(state));
  }

  clear(readerId: string, caseId: string): void {
    this.backing.removeItem(this.caseKey(readerId, caseId));
  }

  markSubmitted(readerId: string, caseId: string): void {
    const done = this.submittedCases(readerId);
    done.add(caseId);
    this.backing.setItem(this.submittedKey(readerId), JSON.stringify([...done].sort()));
  }

  submittedCases(readerId: string): Set<string> {
    const raw = this.backing.getItem(this.submittedKey(readerId));
    if (raw === null) return new Set();
    try {
      const parsed: unknown = JSON.parse(raw);
      if (Array.isArray(parsed) && parsed.every((v) => typeof v === "string")) {
        return new Set(parsed);
      }
    } catch {
      // fall through
    }
    this.backing.removeItem(this.submittedKey(readerId));
    return new Set();
  }
}
