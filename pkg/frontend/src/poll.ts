import type { StudioApi } from './api.js';
import type { JobView, SessionView } from './types.js';

export interface PollOptions {
  intervalMs?: number;
  onUpdate?: (job: JobView) => void;
}

/**
 * Poll a job until it reaches a terminal state. Resolves with the final job
 * on success, rejects with the job error on failure. Progress reported via
 * onUpdate is clamped so observers never see it go backwards.
 */
export function pollJob(api: StudioApi, jobId: string, opts: PollOptions = {}): Promise<JobView> {
  const intervalMs = opts.intervalMs ?? 1000;
  let highWater = 0;
  return new Promise((resolve, reject) => {
    const tick = async () => {
      let job: JobView;
      try {
        job = await api.getJob(jobId);
      } catch (err) {
        clearInterval(timer);
        reject(err);
        return;
      }
      highWater = Math.max(highWater, job.progress[0]);
      opts.onUpdate?.({ ...job, progress: [highWater, job.progress[1]] });
      if (job.state === 'done') {
        clearInterval(timer);
        resolve(job);
      } else if (job.state === 'failed') {
        clearInterval(timer);
        reject(new Error(job.error || 'job failed'));
      }
    };
    const timer = setInterval(tick, intervalMs);
    tick();
  });
}

/** Poll a session until extraction settles (ready or failed). */
export function pollSession(
  api: StudioApi,
  sessionId: string,
  intervalMs = 1000,
  onUpdate?: (session: SessionView) => void,
): Promise<SessionView> {
  return new Promise((resolve, reject) => {
    const tick = async () => {
      let session: SessionView;
      try {
        session = await api.getSession(sessionId);
      } catch (err) {
        clearInterval(timer);
        reject(err);
        return;
      }
      onUpdate?.(session);
      if (session.status !== 'extracting') {
        clearInterval(timer);
        resolve(session);
      }
    };
    const timer = setInterval(tick, intervalMs);
    tick();
  });
}
