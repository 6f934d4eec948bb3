/**
 * DOM wiring for the three-panel blinded reader. One original panel plus
 * two unlabeled segmentation panels scroll in lockstep; scores, flags, and
 * the preference are entered per case and survive reloads via PendingStore.
 * All validation mirrors the server exactly, and server rejections are
 * shown verbatim.
 *
 * Keyboard map (high-volume scoring is keyboard-first):
 *   arrows / wheel / PageUp / PageDown   scroll slices, Home/End jump
 *   m, r       select the side the number keys score
 *   1 .. 5     score the selected side
 *   f          toggle the unacceptable-slice flag on the selected side
 *   p          cycle the preference when scores are equal
 *   [ , ]      previous / next case
 *   Enter      submit
 */

import { ApiClient, ApiError } from "./api.js";
import type { PendingScores, Side, ViewState } from "./state.js";
import {
  MAX_SCORE,
  MIN_SCORE,
  SIDES,
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
} from "./state.js";
import { PendingStore } from "./storage.js";
import type { CaseInfo, Layer, Preference } from "./types.js";

const LAYERS: readonly Layer[] = ["original", "middle", "right"];
const PREFERENCE_CYCLE: readonly Preference[] = ["middle", "right", "none"];

export interface AppOptions {
  root: HTMLElement;
  api: ApiClient;
  store: PendingStore;
  readerId: string;
}

const TEMPLATE = `
  <header class="topbar">
    <span class="reader-label"></span>
    <span class="case-label"></span>
    <span class="slice-label"></span>
    <span class="progress-label"></span>
  </header>
  <div class="panels">
    ${LAYERS.map(
      (layer) => `
    <figure class="panel" data-layer="${layer}">
      <img alt="${layer} slice" draggable="false">
      <button type="button" class="retry" hidden>retry</button>
      <figcaption>${layer}</figcaption>
    </figure>`,
    ).join("")}
  </div>
  <form class="score-form">
    ${SIDES.map(
      (side) => `
    <fieldset class="side" data-side="${side}">
      <legend>${side} segmentation</legend>
      <div class="scores"></div>
      <label class="flag-label">
        <input type="checkbox" class="flag"> unacceptable slice
      </label>
    </fieldset>`,
    ).join("")}
    <fieldset class="preference" hidden>
      <legend>preferred segmentation</legend>
      ${PREFERENCE_CYCLE.map(
        (value) => `
      <label><input type="radio" name="preference" value="${value}"> ${value}</label>`,
      ).join("")}
    </fieldset>
    <button type="submit" class="submit" disabled>submit</button>
    <p class="feedback" role="alert"></p>
  </form>
  <p class="hint">arrows/wheel scroll &middot; m/r pick side &middot; 1-5 score &middot; f flag &middot; p preference &middot; enter submit</p>
  <p class="done" hidden>All cases scored. Individual cases can be revisited with [ and ].</p>
`;

export class ReaderApp {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly store: PendingStore;
  private readonly readerId: string;

  private cases: CaseInfo[] = [];
  private caseIndex = 0;
  private state: ViewState | null = null;
  private inFlight = false;
  private feedback = "";
  private retryCounter = 0;

  constructor(options: AppOptions) {
    this.root = options.root;
    this.api = options.api;
    this.store = options.store;
    this.readerId = options.readerId;
  }

  /** Snapshot for tests and debugging; mutations go through the handlers. */
  get view(): ViewState | null {
    return this.state === null ? null : structuredClone(this.state);
  }

  async start(): Promise<void> {
    this.cases = await this.api.listCases();
    if (this.cases.length === 0) {
      this.root.textContent = "the service lists no cases";
      return;
    }
    this.buildDom();
    const submitted = this.store.submittedCases(this.readerId);
    const firstUnscored = this.cases.findIndex((c) => !submitted.has(c.case_id));
    this.openCase(firstUnscored === -1 ? 0 : firstUnscored);
  }

  private buildDom(): void {
    this.root.innerHTML = TEMPLATE;
    const label = this.q<HTMLElement>(".reader-label");
    label.textContent = `reader ${this.readerId}`;

    for (const side of SIDES) {
      const scores = this.q<HTMLElement>(`.side[data-side="${side}"] .scores`);
      for (let s = MIN_SCORE; s <= MAX_SCORE; s++) {
        const button = this.root.ownerDocument.createElement("button");
        button.type = "button";
        button.className = "score";
        button.dataset.score = String(s);
        button.textContent = String(s);
        button.addEventListener("click", () => this.handleScore(side, s));
        scores.appendChild(button);
      }
      this.q<HTMLInputElement>(`.side[data-side="${side}"] .flag`).addEventListener(
        "change",
        () => this.handleFlag(side),
      );
      this.q<HTMLElement>(`.side[data-side="${side}"]`).addEventListener("click", () => {
        if (this.state !== null && this.state.activeSide !== side) {
          this.state = { ...this.state, activeSide: side };
          this.render();
        }
      });
    }

    for (const input of this.root.querySelectorAll<HTMLInputElement>(".preference input")) {
      input.addEventListener("change", () => {
        this.handlePreference(input.value as Preference);
      });
    }

    this.q<HTMLFormElement>(".score-form").addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });

    const panels = this.q<HTMLElement>(".panels");
    panels.addEventListener("wheel", (event) => {
      event.preventDefault();
      this.scroll(event.deltaY > 0 ? 1 : -1);
    });

    for (const layer of LAYERS) {
      const img = this.q<HTMLImageElement>(`.panel[data-layer="${layer}"] img`);
      const retry = this.q<HTMLButtonElement>(`.panel[data-layer="${layer}"] .retry`);
      img.addEventListener("error", () => {
        retry.hidden = false;
      });
      img.addEventListener("load", () => {
        retry.hidden = true;
      });
      retry.addEventListener("click", () => {
        retry.hidden = true;
        this.retryCounter += 1;
        img.src = `${this.currentSliceUrl(layer)}&retry=${this.retryCounter}`;
      });
    }

    this.root.ownerDocument.addEventListener("keydown", (event) => this.handleKey(event));
  }

  openCase(index: number): void {
    const info = this.cases[index];
    if (info === undefined) return;
    this.caseIndex = index;
    const stored = this.store.load(this.readerId, info.case_id);
    const pending = stored?.pending ?? emptyPending();
    const z = clampZ(stored?.z ?? Math.floor(info.slices / 2), info.slices);
    this.state = {
      caseId: info.case_id,
      slices: info.slices,
      z,
      activeSide: "middle",
      pending,
    };
    this.feedback = "";
    this.render();
    this.prefetchNeighbors();
  }

  scroll(delta: number): void {
    if (this.state === null) return;
    const next = withSlice(this.state, this.state.z + delta);
    if (next.z === this.state.z) return;
    this.state = next;
    this.persist();
    this.render();
    this.prefetchNeighbors();
  }

  async submit(): Promise<void> {
    if (this.state === null || this.inFlight) return;
    const pending = this.state.pending;
    if (!canSubmit(pending)) {
      this.feedback = submitBlocker(pending) ?? "";
      this.render();
      return;
    }
    this.inFlight = true;
    this.render();
    try {
      const ack = await this.api.submitScore({
        case_id: this.state.caseId,
        reader_id: this.readerId,
        middle: {
          score: pending.middle.score as number,
          unacceptable_slice_flag: pending.middle.flag,
        },
        right: {
          score: pending.right.score as number,
          unacceptable_slice_flag: pending.right.flag,
        },
        preference: pending.preference,
      });
      this.store.markSubmitted(this.readerId, this.state.caseId);
      this.store.clear(this.readerId, this.state.caseId);
      this.feedback = `saved record ${ack.record_id}`;
      this.advance();
    } catch (error) {
      // server rejections carry the violated rule by name; show it as-is
      this.feedback = error instanceof ApiError ? error.message : "submit failed; scores kept";
    } finally {
      this.inFlight = false;
      this.render();
    }
  }

  private advance(): void {
    const submitted = this.store.submittedCases(this.readerId);
    for (let step = 1; step <= this.cases.length; step++) {
      const index = (this.caseIndex + step) % this.cases.length;
      const info = this.cases[index];
      if (info !== undefined && !submitted.has(info.case_id)) {
        const saved = this.feedback;
        this.openCase(index);
        this.feedback = saved;
        return;
      }
    }
    this.q<HTMLElement>(".done").hidden = false;
  }

  private handleScore(side: Side, score: number): void {
    if (this.state === null) return;
    try {
      this.state = {
        ...this.state,
        activeSide: side,
        pending: setScore(this.state.pending, side, score),
      };
      this.feedback = "";
      this.persist();
    } catch (error) {
      this.feedback = error instanceof Error ? error.message : String(error);
    }
    this.render();
  }

  private handleFlag(side: Side): void {
    if (this.state === null) return;
    this.state = {
      ...this.state,
      activeSide: side,
      pending: toggleFlag(this.state.pending, side),
    };
    this.feedback = "";
    this.persist();
    this.render();
  }

  private handlePreference(preference: Preference | null): void {
    if (this.state === null) return;
    try {
      this.state = {
        ...this.state,
        pending: setPreference(this.state.pending, preference),
      };
      this.feedback = "";
      this.persist();
    } catch (error) {
      this.feedback = error instanceof Error ? error.message : String(error);
    }
    this.render();
  }

  private handleKey(event: KeyboardEvent): void {
    if (this.state === null) return;
    const key = event.key;
    if (key === "ArrowDown" || key === "ArrowRight" || key === "PageDown") {
      event.preventDefault();
      this.scroll(1);
    } else if (key === "ArrowUp" || key === "ArrowLeft" || key === "PageUp") {
      event.preventDefault();
      this.scroll(-1);
    } else if (key === "Home") {
      event.preventDefault();
      this.scroll(-this.state.z);
    } else if (key === "End") {
      event.preventDefault();
      this.scroll(this.state.slices);
    } else if (key >= "1" && key <= "5") {
      this.handleScore(this.state.activeSide, Number(key));
    } else if (key === "m" || key === "r") {
      this.state = { ...this.state, activeSide: key === "m" ? "middle" : "right" };
      this.render();
    } else if (key === "f") {
      this.handleFlag(this.state.activeSide);
    } else if (key === "p") {
      if (preferenceVisible(this.state.pending)) {
        const current = this.state.pending.preference;
        const at = current === null ? -1 : PREFERENCE_CYCLE.indexOf(current);
        const next = PREFERENCE_CYCLE[(at + 1) % PREFERENCE_CYCLE.length] as Preference;
        this.handlePreference(next);
      }
    } else if (key === "[" || key === "]") {
      const step = key === "]" ? 1 : -1;
      const count = this.cases.length;
      this.openCase(((this.caseIndex + step) % count + count) % count);
    } else if (key === "Enter") {
      event.preventDefault();
      void this.submit();
    }
  }

  private persist(): void {
    if (this.state === null) return;
    this.store.save(this.readerId, this.state.caseId, {
      z: this.state.z,
      pending: this.state.pending,
    });
  }

  private currentSliceUrl(layer: Layer): string {
    if (this.state === null) throw new Error("no case open");
    return this.api.sliceUrl(this.state.caseId, this.state.z, layer);
  }

  private prefetchNeighbors(): void {
    if (this.state === null || typeof Image === "undefined") return;
    for (const dz of [-1, 1]) {
      const z = this.state.z + dz;
      if (z < 0 || z >= this.state.slices) continue;
      for (const layer of LAYERS) {
        new Image().src = this.api.sliceUrl(this.state.caseId, z, layer);
      }
    }
  }

  private render(): void {
    if (this.state === null) return;
    const { caseId, slices, z, activeSide, pending } = this.state;

    this.q<HTMLElement>(".case-label").textContent = `case ${caseId}`;
    this.q<HTMLElement>(".slice-label").textContent = `slice ${z + 1} / ${slices}`;
    const done = this.store.submittedCases(this.readerId).size;
    this.q<HTMLElement>(".progress-label").textContent = `${done} of ${this.cases.length} scored`;

    for (const layer of LAYERS) {
      const img = this.q<HTMLImageElement>(`.panel[data-layer="${layer}"] img`);
      const url = this.currentSliceUrl(layer);
      if (img.getAttribute("src") !== url) img.src = url;
    }

    for (const side of SIDES) {
      const fieldset = this.q<HTMLElement>(`.side[data-side="${side}"]`);
      fieldset.classList.toggle("active", side === activeSide);
      const open = allowedScores(pending[side]);
      for (const button of fieldset.querySelectorAll<HTMLButtonElement>("button.score")) {
        const value = Number(button.dataset.score);
        button.disabled = !open.includes(value);
        button.classList.toggle("selected", pending[side].score === value);
      }
      this.q<HTMLInputElement>(`.side[data-side="${side}"] .flag`).checked = pending[side].flag;
    }

    const preferenceBox = this.q<HTMLElement>(".preference");
    preferenceBox.hidden = !preferenceVisible(pending);
    for (const input of this.root.querySelectorAll<HTMLInputElement>(".preference input")) {
      input.checked = pending.preference === input.value;
    }

    this.q<HTMLButtonElement>(".submit").disabled = this.inFlight || !canSubmit(pending);
    this.q<HTMLElement>(".feedback").textContent = this.feedback;
  }

  private q<T extends Element>(selector: string): T {
    const found = this.root.querySelector<T>(selector);
    if (found === null) throw new Error(`missing element ${selector}`);
    return found;
  }
}

export function createApp(options: AppOptions): ReaderApp {
  return new ReaderApp(options);
}
