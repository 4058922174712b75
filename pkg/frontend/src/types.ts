// Wire types mirroring the study service's JSON API exactly.

export interface ActiveTrial {
  done: false;
  trial_id: string;
  left_url: string;
  right_url: string;
  display_ms: number | null;
  answered: number;
  total: number;
}

export interface Completion {
  done: true;
  answered: number;
  total: number;
}

export type TrialReply = ActiveTrial | Completion;

export type Choice = "left" | "right";

export interface ResponsePayload {
  trial_id: string;
  session: string;
  choice: Choice;
  response_time_ms: number;
  // actual shown duration measured from frame callbacks, alongside the
  // nominal display_ms the server asked for
  shown_ms?: number | null;
}
