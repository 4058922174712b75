// Trial loop: fetch -> preload both images -> blank gap -> single-paint
// reveal -> (timed hide) -> enable choices -> submit exactly once -> next.

import { fetchTrial, submitResponse, type NetOptions } from "./net.js";
import { presentPair, type FrameSource } from "./timing.js";
import type { ActiveTrial, Choice } from "./types.js";

export interface StudyView {
  setProgress(answered: number, total: number): void;
  /** Point the two slots at their URLs; both stay hidden. */
  stage(leftUrl: string, rightUrl: string): void;
  reveal(): void;
  hide(): void;
  showBlank(): void;
  /** Buttons become active; resolves with the observer's choice. */
  awaitChoice(): Promise<Choice>;
  disableChoices(): void;
  showCompletion(answered: number, total: number): void;
}

export interface SessionDeps {
  baseUrl: string;
  session: string;
  view: StudyView;
  frames: FrameSource;
  net: NetOptions;
  /** Resolves when both images are fully decoded. */
  preload(leftUrl: string, rightUrl: string): Promise<void>;
  now(): number;
  sleep(ms: number): Promise<void>;
  /** Blank interval between trials (protocol extension). */
  interTrialBlankMs?: number;
}

export interface SessionSummary {
  answered: number;
  total: number;
  submissions: number;
}

export async function runSession(deps: SessionDeps): Promise<SessionSummary> {
  const blankMs = deps.interTrialBlankMs ?? 500;
  let submissions = 0;
  let first = true;
  for (;;) {
    const reply = await fetchTrial(deps.baseUrl, deps.session, deps.net);
    if (reply.done) {
      deps.view.showCompletion(reply.answered, reply.total);
      return { answered: reply.answered, total: reply.total, submissions };
    }
    const trial: ActiveTrial = reply;
    deps.view.setProgress(trial.answered, trial.total);
    // preload first so the display window opens on decoded images
    await deps.preload(trial.left_url, trial.right_url);
    deps.view.stage(trial.left_url, trial.right_url);
    if (!first) {
      deps.view.showBlank();
      await deps.sleep(blankMs);
    }
    first = false;
    const shown = await presentPair(deps.frames, deps.view, trial.display_ms);
    const choiceEnabledAt = deps.now();
    const choice = await deps.view.awaitChoice();
    deps.view.disableChoices(); // no trial can be answered twice
    const responseTime = deps.now() - choiceEnabledAt;
    await submitResponse(
      deps.baseUrl,
      {
        trial_id: trial.trial_id,
        session: deps.session,
        choice,
        response_time_ms: responseTime,
        shown_ms: shown.shownMs,
      },
      deps.net,
    );
    submissions += 1;
  }
}
