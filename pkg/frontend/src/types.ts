// Wire types for the reader study HTTP API. The server never names the
// segmentation methods here; panels are addressed purely by layer.

export type Layer = "original" | "middle" | "right";

export type Preference = "middle" | "right" | "none";

export interface CaseInfo {
  case_id: string;
  slices: number;
}

export interface CasesResponse {
  cases: CaseInfo[];
}

export interface SideScore {
  score: number;
  unacceptable_slice_flag: boolean;
}

export interface ScoreSubmission {
  case_id: string;
  reader_id: string;
  middle: SideScore;
  right: SideScore;
  preference: Preference | null;
}

export interface ScoreAck {
  record_id: number;
}
