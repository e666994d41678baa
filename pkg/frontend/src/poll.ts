/** Poll a run until terminal: 1 s interval, multiplicative backoff, capped. */

import type { ApiRun } from './types.js';
import { TERMINAL_STATUSES } from './types.js';

export interface PollOptions {
  intervalMs?: number;
  backoffFactor?: number;
  maxIntervalMs?: number;
  timeoutMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export async function pollRun(
  getRun: (id: string) => Promise<ApiRun>,
  id: string,
  onUpdate: (run: ApiRun) => void,
  options: PollOptions = {},
): Promise<ApiRun> {
  const {
    intervalMs = 1000,
    backoffFactor = 1.5,
    maxIntervalMs = 5000,
    timeoutMs = 10 * 60 * 1000,
    sleep = defaultSleep,
  } = options;

  let waitMs = intervalMs;
  const startedAt = Date.now();
  for (;;) {
    const run = await getRun(id);
    onUpdate(run);
    if (TERMINAL_STATUSES.has(run.status)) return run;
    if (Date.now() - startedAt > timeoutMs) throw new Error(`run ${id} did not finish within ${timeoutMs} ms`);
    await sleep(waitMs);
    waitMs = Math.min(waitMs * backoffFactor, maxIntervalMs);
  }
}
