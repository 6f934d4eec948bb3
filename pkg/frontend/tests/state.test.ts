import { describe, expect, it } from "vitest";

import {
  MAX_FLAGGED_SCORE,
  RULE_CAP,
  RULE_PREFERENCE_ONLY_WHEN_EQUAL,
  RULE_PREFERENCE_REQUIRED_WHEN_EQUAL,
  RULE_SCORE_RANGE,
  allowedScores,
  canSubmit,
  clampZ,
  emptyPending,
  preferenceVisible,
  setPreference,
  setScore,
  submitBlocker,
  toggleFlag,
  withSlice,
  type PendingScores,
  type ViewState,
} from "../src/state.js";
import type { Preference } from "../src/types.js";

function viewState(z: number, slices = 10): ViewState {
  return { caseId: "c1", slices, z, activeSide: "middle", pending: emptyPending() };
}

describe("slice clamping", () => {
  it("keeps z inside [0, slices-1]", () => {
    expect(clampZ(-3, 5)).toBe(0);
    expect(clampZ(0, 5)).toBe(0);
    expect(clampZ(4, 5)).toBe(4);
    expect(clampZ(99, 5)).toBe(4);
  });

  it("rejects empty volumes", () => {
    expect(() => clampZ(0, 0)).toThrow(/positive/);
  });

  it("withSlice clamps at both ends", () => {
    expect(withSlice(viewState(9), 10).z).toBe(9);
    expect(withSlice(viewState(0), -1).z).toBe(0);
    expect(withSlice(viewState(3), 4).z).toBe(4);
  });
});

describe("score entry", () => {
  it("stores integer scores in range", () => {
    const pending = setScore(emptyPending(), "middle", 4);
    expect(pending.middle.score).toBe(4);
    expect(pending.right.score).toBeNull();
  });

  it.each([0, 6, 2.5, NaN])("rejects score %s", (bad) => {
    expect(() => setScore(emptyPending(), "middle", bad)).toThrow(RULE_SCORE_RANGE);
  });

  it("caps a flagged side at two", () => {
    const flagged = toggleFlag(emptyPending(), "right");
    expect(allowedScores(flagged.right)).toEqual([1, 2]);
    expect(() => setScore(flagged, "right", 3)).toThrow(RULE_CAP);
    expect(setScore(flagged, "right", MAX_FLAGGED_SCORE).right.score).toBe(2);
  });

  it("flagging wipes a score above the cap instead of squashing it", () => {
    let pending = setScore(emptyPending(), "middle", 4);
    pending = toggleFlag(pending, "middle");
    expect(pending.middle.score).toBeNull();
    expect(pending.middle.flag).toBe(true);
  });

  it("flagging keeps a score already within the cap", () => {
    let pending = setScore(emptyPending(), "middle", 2);
    pending = toggleFlag(pending, "middle");
    expect(pending.middle.score).toBe(2);
  });

  it("unflagging reopens the full range but restores nothing", () => {
    let pending = toggleFlag(setScore(emptyPending(), "middle", 5), "middle");
    pending = toggleFlag(pending, "middle");
    expect(pending.middle.flag).toBe(false);
    expect(pending.middle.score).toBeNull();
    expect(allowedScores(pending.middle)).toEqual([1, 2, 3, 4, 5]);
  });
});

describe("preference", () => {
  function equalScores(): PendingScores {
    return setScore(setScore(emptyPending(), "middle", 3), "right", 3);
  }

  it("is only offered when both scores are set and equal", () => {
    expect(preferenceVisible(emptyPending())).toBe(false);
    expect(preferenceVisible(setScore(emptyPending(), "middle", 3))).toBe(false);
    expect(preferenceVisible(setScore(setScore(emptyPending(), "middle", 5), "right", 3))).toBe(false);
    expect(preferenceVisible(equalScores())).toBe(true);
  });

  it("cannot be set while hidden", () => {
    expect(() => setPreference(emptyPending(), "middle")).toThrow(
      RULE_PREFERENCE_ONLY_WHEN_EQUAL,
    );
  });

  it("is cleared when a score change breaks the tie", () => {
    const chosen = setPreference(equalScores(), "none");
    expect(chosen.preference).toBe("none");
    const diverged = setScore(chosen, "right", 5);
    expect(diverged.preference).toBeNull();
  });

  it("is cleared when flagging wipes one of the tied scores", () => {
    const tiedHigh = setScore(setScore(emptyPending(), "middle", 4), "right", 4);
    const chosen = setPreference(tiedHigh, "right");
    const flagged = toggleFlag(chosen, "middle");
    expect(flagged.middle.score).toBeNull();
    expect(flagged.preference).toBeNull();
  });
});

describe("submission gating mirrors the server", () => {
  it("blocks incomplete entries", () => {
    expect(submitBlocker(emptyPending())).toMatch(/middle score not entered/);
    expect(submitBlocker(setScore(emptyPending(), "middle", 3))).toMatch(/right score/);
  });

  it("agrees with a reference predicate over all score/preference combos", () => {
    const prefs: (Preference | null)[] = [null, "middle", "right", "none"];
    for (let middle = 1; middle <= 5; middle++) {
      for (let right = 1; right <= 5; right++) {
        for (const pref of prefs) {
          const pending: PendingScores = {
            middle: { score: middle, flag: false },
            right: { score: right, flag: false },
            preference: pref,
          };
          const equal = middle === right;
          const acceptable = equal ? pref !== null : pref === null;
          expect(canSubmit(pending)).toBe(acceptable);
          if (!acceptable) {
            expect(submitBlocker(pending)).toBe(
              equal ? RULE_PREFERENCE_REQUIRED_WHEN_EQUAL : RULE_PREFERENCE_ONLY_WHEN_EQUAL,
            );
          }
        }
      }
    }
  });

  it("reports the cap on a hand-built flagged record", () => {
    const pending: PendingScores = {
      middle: { score: 4, flag: true },
      right: { score: 3, flag: false },
      preference: null,
    };
    expect(submitBlocker(pending)).toBe(RULE_CAP);
    expect(canSubmit(pending)).toBe(false);
  });

  it("accepts a flagged record within the cap", () => {
    const pending: PendingScores = {
      middle: { score: 2, flag: true },
      right: { score: 5, flag: false },
      preference: null,
    };
    expect(canSubmit(pending)).toBe(true);
  });
});
