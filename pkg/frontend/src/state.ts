import type { CellView, SessionView } from './types.js';

export const NUM_CELLS = 6;

/**
 * Studio state is a pure function of the latest server snapshot plus local
 * drafts. Reloading the page and re-fetching the session reconstructs the
 * identical view.
 */
export interface StudioState {
  session: SessionView | null;
  drafts: string[]; // per-cell prompt drafts, local only
  jobProgress: Record<number, [number, number]>; // cell index -> (step, total)
  banner: string | null;
}

export function emptyState(): StudioState {
  return {
    session: null,
    drafts: Array(NUM_CELLS).fill(''),
    jobProgress: {},
    banner: null,
  };
}

export function withSession(state: StudioState, session: SessionView): StudioState {
  const banner =
    session.status === 'failed'
      ? session.error || 'extraction failed'
      : null;
  return { ...state, session, banner };
}

export function withDraft(state: StudioState, cell: number, draft: string): StudioState {
  const drafts = state.drafts.slice();
  drafts[cell] = draft;
  return { ...state, drafts };
}

export function withProgress(
  state: StudioState,
  cell: number,
  progress: [number, number],
): StudioState {
  return { ...state, jobProgress: { ...state.jobProgress, [cell]: progress } };
}

export interface CellViewModel {
  index: number;
  status: CellView['status'];
  draft: string;
  canGenerate: boolean;
  canImportFrom: boolean; // this cell has at least one result to import
  latestImageUrl: string | null;
  lineage: string | null; // e.g. "cell 1 / result 0"
  promptHistory: string[];
  progressText: string | null;
  error: string | null;
}

export function cellViewModel(state: StudioState, index: number): CellViewModel {
  const session = state.session;
  const cell = session?.cells[index];
  const draft = state.drafts[index] ?? '';
  const ready = session?.status === 'ready';
  const busy = cell?.status === 'queued' || cell?.status === 'running';
  const successes = cell?.results.filter((r) => r.image_url) ?? [];
  const latest = successes.length ? successes[successes.length - 1] : null;
  const failed = cell?.results.length
    ? cell.results[cell.results.length - 1].error
    : null;
  const progress = state.jobProgress[index];
  return {
    index,
    status: cell?.status ?? 'empty',
    draft,
    canGenerate: !!ready && !busy && draft.trim().length > 0,
    canImportFrom: successes.length > 0,
    latestImageUrl: latest?.image_url ?? null,
    lineage: cell?.imported_from
      ? `cell ${cell.imported_from[0]} / result ${cell.imported_from[1]}`
      : null,
    promptHistory: cell?.prompt_history ?? [],
    progressText:
      busy && progress ? `${progress[0]}/${progress[1]}` : null,
    error: cell?.status === 'failed' ? failed : null,
  };
}

export function cellViewModels(state: StudioState): CellViewModel[] {
  return Array.from({ length: NUM_CELLS }, (_, i) => cellViewModel(state, i));
}

/** Cells a given destination may import from: any other cell with results. */
export function importSources(state: StudioState, toCell: number): number[] {
  return cellViewModels(state)
    .filter((vm) => vm.index !== toCell && vm.canImportFrom)
    .map((vm) => vm.index);
}
