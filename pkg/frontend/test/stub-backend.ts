import type { FetchLike } from '../src/api';
import type { CellView, JobView, SessionView } from '../src/types';

export interface StubOptions {
  /** polls needed to finish the extraction job */
  extractSteps?: number;
  /** total steps reported by generation jobs */
  generateSteps?: number;
  /** if set, extraction fails with this error message */
  failExtraction?: string;
}

interface StubJob extends JobView {
  step: number;
}

let counter = 0;
const nextId = (prefix: string) => `${prefix}-${++counter}`;

/**
 * In-memory fetch-compatible stand-in for the session service. The simulated
 * clock advances one step per GET request, so tests drive job progress simply
 * by polling. A single job runs at a time; the rest wait in FIFO order, like
 * the real service.
 */
export class StubBackend {
  sessions = new Map<string, SessionView>();
  jobs = new Map<string, StubJob>();
  queue: string[] = [];
  running: string | null = null;
  requests: { method: string; url: string }[] = [];

  constructor(private opts: StubOptions = {}) {}

  fetch: FetchLike = async (url, init) => {
    const method = (init?.method ?? 'GET').toUpperCase();
    this.requests.push({ method, url });
    if (method === 'GET') this.tick();

    let m: RegExpMatchArray | null;
    if (method === 'POST' && url === '/sessions') return this.createSession(init!.body as FormData);
    if ((m = url.match(/^\/sessions\/([^/]+)$/)) && method === 'GET') {
      const session = this.sessions.get(m[1]);
      return session ? json(session) : err(404, 'no such session');
    }
    if ((m = url.match(/^\/sessions\/([^/]+)\/cells\/(\d+)$/)) && method === 'GET') {
      const session = this.sessions.get(m[1]);
      if (!session) return err(404, 'no such session');
      const cell = session.cells[Number(m[2])];
      return cell ? json(cell) : err(400, 'cell index out of range');
    }
    if ((m = url.match(/^\/sessions\/([^/]+)\/cells\/(\d+)\/generate$/)) && method === 'POST') {
      return this.generate(m[1], Number(m[2]), JSON.parse(init!.body as string));
    }
    if ((m = url.match(/^\/sessions\/([^/]+)\/cells\/(\d+)\/import$/)) && method === 'POST') {
      return this.importResult(m[1], Number(m[2]), JSON.parse(init!.body as string));
    }
    if ((m = url.match(/^\/jobs\/([^/]+)$/)) && method === 'GET') {
      const job = this.jobs.get(m[1]);
      return job ? json(jobView(job)) : err(404, 'no such job');
    }
    return err(404, `unhandled ${method} ${url}`);
  };

  private createSession(form: FormData): Response {
    const id = nextId('session');
    const now = Date.now() / 1000;
    const session: SessionView = {
      id,
      caption: String(form.get('caption') ?? ''),
      object_prompt: form.get('object_prompt') ? String(form.get('object_prompt')) : null,
      status: 'extracting',
      error: null,
      reconstruction_psnr: null,
      source_url: `/results/${id}/source.png`,
      created_at: now,
      updated_at: now,
      cells: Array.from({ length: 6 }, (_, index): CellView => ({
        index,
        status: 'empty',
        prompt_history: [],
        results: [],
        imported_from: null,
      })),
    };
    this.sessions.set(id, session);
    const job = this.enqueue({
      id: nextId('job'),
      session_id: id,
      cell_index: null,
      kind: 'extract',
      state: 'queued',
      progress: [0, this.opts.extractSteps ?? 2],
      phase: 'inverting',
      error: null,
      result_url: null,
      step: 0,
    });
    return json({ session, job_id: job.id }, 201);
  }

  private generate(sessionId: string, cell: number, body: { prompt?: string }): Response {
    const session = this.sessions.get(sessionId);
    if (!session) return err(404, 'no such session');
    if (cell < 0 || cell > 5) return err(400, 'cell index out of range');
    if (!body.prompt || !body.prompt.trim()) return err(400, 'prompt must not be empty');
    if (session.status !== 'ready') return err(409, 'session is not ready');
    session.cells[cell].status = 'queued';
    session.cells[cell].prompt_history.push(body.prompt);
    const job = this.enqueue({
      id: nextId('job'),
      session_id: sessionId,
      cell_index: cell,
      kind: 'generate',
      state: 'queued',
      progress: [0, this.opts.generateSteps ?? 3],
      phase: 'synthesizing',
      error: null,
      result_url: null,
      step: 0,
    });
    return json({ job_id: job.id, cell: session.cells[cell] }, 202);
  }

  private importResult(
    sessionId: string,
    toCell: number,
    body: { from_cell: number; result_ordinal: number },
  ): Response {
    const session = this.sessions.get(sessionId);
    if (!session) return err(404, 'no such session');
    const source = session.cells[body.from_cell];
    const result = source?.results.find((r) => r.ordinal === body.result_ordinal);
    if (!result || !result.image_url) return err(404, 'no such result');
    session.cells[toCell].imported_from = [body.from_cell, body.result_ordinal];
    return json(session.cells[toCell]);
  }

  private enqueue(job: StubJob): StubJob {
    this.jobs.set(job.id, job);
    this.queue.push(job.id);
    this.startNext();
    return job;
  }

  private startNext() {
    if (this.running || !this.queue.length) return;
    this.running = this.queue.shift()!;
    const job = this.jobs.get(this.running)!;
    job.state = 'running';
    if (job.cell_index !== null) {
      this.sessions.get(job.session_id)!.cells[job.cell_index].status = 'running';
    }
  }

  /** Advance the running job by one step; finish it when it reaches the end. */
  private tick() {
    if (!this.running) return;
    const job = this.jobs.get(this.running)!;
    job.step += 1;
    job.progress = [Math.min(job.step, job.progress[1]), job.progress[1]];
    if (job.step < job.progress[1]) return;
    this.running = null;
    const session = this.sessions.get(job.session_id)!;
    if (job.kind === 'extract') {
      if (this.opts.failExtraction) {
        job.state = 'failed';
        job.error = this.opts.failExtraction;
        session.status = 'failed';
        session.error = this.opts.failExtraction;
      } else {
        job.state = 'done';
        session.status = 'ready';
        session.reconstruction_psnr = 31.4;
      }
    } else {
      const cell = session.cells[job.cell_index!];
      const ordinal = cell.results.length;
      job.state = 'done';
      job.result_url = `/results/${session.id}/cells/${job.cell_index}/result_${ordinal}.png`;
      cell.results.push({
        ordinal,
        image_url: job.result_url,
        manifest_url: `/results/${session.id}/cells/${job.cell_index}/result_${ordinal}.json`,
        error: null,
      });
      cell.status = 'done';
    }
    session.updated_at = Date.now() / 1000;
    this.startNext();
  }
}

function jobView(job: StubJob): JobView {
  const { step: _step, ...view } = job;
  return { ...view, progress: [...job.progress] as [number, number] };
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

function err(status: number, detail: string): Response {
  return json({ detail }, status);
}
