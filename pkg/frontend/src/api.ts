/**
 * Thin typed client for the reader study service. Only the blinded
 * endpoints are wrapped; the token-gated export is a study-admin action
 * that never belongs in the reader's browser.
 */

import type { CaseInfo, CasesResponse, Layer, ScoreAck, ScoreSubmission } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `request failed with status ${response.status}`;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  sliceUrl(caseId: string, z: number, layer: Layer): string {
    const id = encodeURIComponent(caseId);
    return `${this.base}/api/case/${id}/slice/${z}?layer=${layer}`;
  }

  async listCases(): Promise<CaseInfo[]> {
    const response = await fetch(`${this.base}/api/cases`);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    const body = (await response.json()) as CasesResponse;
    if (!Array.isArray(body.cases)) {
      throw new ApiError(response.status, "malformed case list");
    }
    return body.cases;
  }

  async submitScore(submission: ScoreSubmission): Promise<ScoreAck> {
    const response = await fetch(`${this.base}/api/score`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(submission),
    });
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as ScoreAck;
  }
}
