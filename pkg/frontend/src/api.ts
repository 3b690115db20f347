import type { CellView, GenerateBody, JobView, SessionView } from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function parseError(res: Response): Promise<never> {
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (body && body.detail) detail = body.detail;
  } catch {
    // keep the generic message
  }
  throw new ApiError(res.status, detail);
}

/**
 * Thin typed client over the session service. The backend base URL is the
 * only configuration; `fetchImpl` is injectable so tests can run against a
 * stub backend.
 */
export class StudioApi {
  constructor(
    public baseUrl = '',
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) await parseError(res);
    return res.json();
  }

  async createSession(
    image: Blob,
    caption?: string,
    objectPrompt?: string,
  ): Promise<{ session: SessionView; job_id: string }> {
    const form = new FormData();
    form.append('image', image, 'upload.png');
    if (caption) form.append('caption', caption);
    if (objectPrompt) form.append('object_prompt', objectPrompt);
    return this.request('/sessions', { method: 'POST', body: form });
  }

  getSession(id: string): Promise<SessionView> {
    return this.request(`/sessions/${id}`);
  }

  getCell(sessionId: string, index: number): Promise<CellView> {
    return this.request(`/sessions/${sessionId}/cells/${index}`);
  }

  generate(
    sessionId: string,
    index: number,
    body: GenerateBody,
  ): Promise<{ job_id: string; cell: CellView }> {
    return this.request(`/sessions/${sessionId}/cells/${index}/generate`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  importResult(
    sessionId: string,
    toCell: number,
    fromCell: number,
    resultOrdinal: number,
  ): Promise<CellView> {
    return this.request(`/sessions/${sessionId}/cells/${toCell}/import`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ from_cell: fromCell, result_ordinal: resultOrdinal }),
    });
  }

  getJob(id: string): Promise<JobView> {
    return this.request(`/jobs/${id}`);
  }

  resultUrl(path: string): string {
    return this.baseUrl + path;
  }
}
