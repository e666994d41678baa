/** Typed client for the editing service; the UI talks to nothing else. */

import type { ApiRun, EditOverrides, RerunOverrides } from './types.js';

export class NotFoundError extends Error {}

export class ServiceError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

/** Surface the app depends on; tests substitute a scripted implementation. */
export interface EditApi {
  submitEdit(image: Blob, instruction: string, overrides?: EditOverrides): Promise<ApiRun>;
  getRun(id: string): Promise<ApiRun>;
  rerun(id: string, overrides: RerunOverrides): Promise<ApiRun>;
  artifactUrl(run: ApiRun, name: string): string | null;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function readError(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === 'string') return body.detail;
    return JSON.stringify(body.detail ?? body);
  } catch {
    return response.statusText || `HTTP ${response.status}`;
  }
}

export class ApiClient implements EditApi {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async check(response: Response): Promise<ApiRun> {
    if (response.status === 404) throw new NotFoundError(await readError(response));
    if (!response.ok) throw new ServiceError(await readError(response), response.status);
    return (await response.json()) as ApiRun;
  }

  async submitEdit(image: Blob, instruction: string, overrides: EditOverrides = {}): Promise<ApiRun> {
    const form = new FormData();
    form.append('image', image, 'input.png');
    form.append('instruction', instruction);
    for (const [key, value] of Object.entries(overrides)) {
      if (value !== undefined) form.append(key, String(value));
    }
    const response = await this.fetchFn(`${this.baseUrl}/edits`, { method: 'POST', body: form });
    return this.check(response);
  }

  async getRun(id: string): Promise<ApiRun> {
    const response = await this.fetchFn(`${this.baseUrl}/edits/${encodeURIComponent(id)}`);
    return this.check(response);
  }

  async rerun(id: string, overrides: RerunOverrides): Promise<ApiRun> {
    const response = await this.fetchFn(`${this.baseUrl}/edits/${encodeURIComponent(id)}/rerun`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(overrides),
    });
    return this.check(response);
  }

  artifactUrl(run: ApiRun, name: string): string | null {
    const path = run.artifacts[name];
    return path ? `${this.baseUrl}${path}` : null;
  }
}
