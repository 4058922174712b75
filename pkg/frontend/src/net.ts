// Fetch helpers with retry/backoff. A 409 on submission means the server
// already holds this (session, trial) response -- e.g. our earlier attempt
// landed but the reply was lost -- so it is treated as success. Responses
// are therefore never double-recorded no matter how flaky the network is.

import type { ResponsePayload, TrialReply } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface NetOptions {
  fetchFn: FetchLike;
  retries?: number;
  backoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

async function withRetries<T>(
  attempt: () => Promise<T>,
  retries: number,
  backoffMs: number,
  sleep: (ms: number) => Promise<void>,
): Promise<T> {
  let delay = backoffMs;
  for (let i = 0; ; i++) {
    try {
      return await attempt();
    } catch (err) {
      if (i >= retries) throw err;
      await sleep(delay);
      delay *= 2;
    }
  }
}

export async function fetchTrial(
  baseUrl: string,
  session: string,
  opts: NetOptions,
): Promise<TrialReply> {
  const { fetchFn, retries = 4, backoffMs = 250, sleep = defaultSleep } = opts;
  return withRetries(
    async () => {
      const resp = await fetchFn(
        `${baseUrl}/api/trial?session=${encodeURIComponent(session)}`,
      );
      if (!resp.ok) throw new Error(`trial fetch failed: ${resp.status}`);
      return (await resp.json()) as TrialReply;
    },
    retries,
    backoffMs,
    sleep,
  );
}

export type SubmitOutcome = "recorded" | "already-recorded";

export async function submitResponse(
  baseUrl: string,
  payload: ResponsePayload,
  opts: NetOptions,
): Promise<SubmitOutcome> {
  const { fetchFn, retries = 4, backoffMs = 250, sleep = defaultSleep } = opts;
  return withRetries(
    async () => {
      const resp = await fetchFn(`${baseUrl}/api/response`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      });
      if (resp.status === 409) return "already-recorded";
      if (!resp.ok) throw new Error(`submit failed: ${resp.status}`);
      return "recorded";
    },
    retries,
    backoffMs,
    sleep,
  );
}
