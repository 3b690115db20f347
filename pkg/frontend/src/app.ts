import { StudioApi } from './api.js';
import { pollJob, pollSession } from './poll.js';
import { render } from './render.js';
import {
  cellViewModel,
  emptyState,
  importSources,
  withDraft,
  withProgress,
  withSession,
  type StudioState,
} from './state.js';

/**
 * Imperative shell: owns the mutable state, re-renders on every change and
 * wires DOM events back into API calls. All view logic lives in state.ts
 * and render.ts.
 */
export class StudioApp {
  state: StudioState = emptyState();

  constructor(
    private root: HTMLElement,
    private api: StudioApi,
    private pollIntervalMs = 1000,
  ) {
    this.root.addEventListener('submit', (e) => this.onSubmit(e));
    this.root.addEventListener('click', (e) => this.onClick(e));
    this.root.addEventListener('input', (e) => this.onInput(e));
    this.draw();
  }

  private update(next: StudioState) {
    this.state = next;
    this.draw();
  }

  private draw() {
    this.root.innerHTML = render(this.state);
  }

  async refresh() {
    const id = this.state.session?.id;
    if (id) this.update(withSession(this.state, await this.api.getSession(id)));
  }

  /** Re-enter an existing session (page reload / deep link). */
  async attach(sessionId: string) {
    this.update(withSession(this.state, await this.api.getSession(sessionId)));
  }

  private onSubmit(e: Event) {
    const form = e.target as HTMLFormElement;
    if (form.id !== 'upload') return;
    e.preventDefault();
    const file = (this.root.querySelector('#file') as HTMLInputElement).files?.[0];
    if (!file) return;
    const caption = (this.root.querySelector('#caption') as HTMLInputElement).value;
    const objectPrompt = (this.root.querySelector('#object-prompt') as HTMLInputElement).value;
    void this.upload(file, caption, objectPrompt);
  }

  async upload(file: Blob, caption?: string, objectPrompt?: string) {
    try {
      const { session } = await this.api.createSession(file, caption, objectPrompt);
      this.update(withSession(this.state, session));
      const settled = await pollSession(this.api, session.id, this.pollIntervalMs, (s) =>
        this.update(withSession(this.state, s)),
      );
      this.update(withSession(this.state, settled));
    } catch (err: any) {
      this.update({ ...this.state, banner: err.message || 'upload failed' });
    }
  }

  private onInput(e: Event) {
    const input = e.target as HTMLInputElement;
    const cell = input.dataset?.cell;
    if (cell !== undefined && input.classList.contains('prompt')) {
      // track the draft without a full re-render, which would steal focus;
      // only the paired button's enabled state needs to follow the draft
      this.state = withDraft(this.state, Number(cell), input.value);
      const vm = cellViewModel(this.state, Number(cell));
      const button = this.root.querySelector(
        `button.generate[data-cell="${cell}"]`,
      ) as HTMLButtonElement | null;
      if (button) button.disabled = !vm.canGenerate;
    }
  }

  private onClick(e: Event) {
    const button = e.target as HTMLElement;
    const cell = button.dataset?.cell;
    if (cell === undefined) return;
    if (button.classList.contains('generate')) void this.generate(Number(cell));
    if (button.classList.contains('import')) void this.importInto(Number(cell));
  }

  async generate(cell: number) {
    const session = this.state.session;
    if (!session) return;
    const vm = cellViewModel(this.state, cell);
    if (!vm.canGenerate) return; // local validation, no request sent
    try {
      const { job_id } = await this.api.generate(session.id, cell, { prompt: vm.draft });
      await this.refresh();
      await pollJob(this.api, job_id, {
        intervalMs: this.pollIntervalMs,
        onUpdate: (job) => {
          this.update(withProgress(this.state, cell, job.progress));
        },
      });
    } catch (err: any) {
      this.update({ ...this.state, banner: err.message || 'generation failed' });
    }
    await this.refresh();
  }

  async importInto(toCell: number) {
    const session = this.state.session;
    if (!session) return;
    const sources = importSources(this.state, toCell);
    if (!sources.length) return;
    // minimal picker: latest result of the first eligible source cell
    const fromCell = sources[0];
    const results = session.cells[fromCell].results.filter((r) => r.image_url);
    const ordinal = results[results.length - 1].ordinal;
    try {
      await this.api.importResult(session.id, toCell, fromCell, ordinal);
      await this.refresh();
    } catch (err: any) {
      this.update({ ...this.state, banner: err.message || 'import failed' });
    }
  }
}

export function mount(root: HTMLElement, baseUrl = ''): StudioApp {
  return new StudioApp(root, new StudioApi(baseUrl));
}
