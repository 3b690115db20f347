import { describe, expect, it } from 'vitest';
import {
  cellViewModel,
  emptyState,
  importSources,
  withDraft,
  withProgress,
  withSession,
} from '../src/state';
import type { SessionView } from '../src/types';

function readySession(over: Partial<SessionView> = {}): SessionView {
  return {
    id: 's1',
    caption: 'a lamp',
    object_prompt: null,
    status: 'ready',
    error: null,
    reconstruction_psnr: 31.0,
    source_url: '/results/s1/source.png',
    created_at: 0,
    updated_at: 0,
    cells: Array.from({ length: 6 }, (_, index) => ({
      index,
      status: 'empty' as const,
      prompt_history: [],
      results: [],
      imported_from: null,
    })),
    ...over,
  };
}

describe('cellViewModel', () => {
  it('disables generation without a session, a draft, or readiness', () => {
    expect(cellViewModel(emptyState(), 0).canGenerate).toBe(false);
    let state = withSession(emptyState(), readySession({ status: 'extracting' }));
    state = withDraft(state, 0, 'a vase');
    expect(cellViewModel(state, 0).canGenerate).toBe(false);
    state = withSession(state, readySession());
    expect(cellViewModel(state, 0).canGenerate).toBe(true);
    expect(cellViewModel(withDraft(state, 0, '   '), 0).canGenerate).toBe(false);
  });

  it('disables generation while the cell is busy', () => {
    const session = readySession();
    session.cells[2].status = 'running';
    const state = withDraft(withSession(emptyState(), session), 2, 'a vase');
    expect(cellViewModel(state, 2).canGenerate).toBe(false);
  });

  it('picks the latest successful result and formats lineage', () => {
    const session = readySession();
    session.cells[1].results = [
      { ordinal: 0, image_url: '/r0.png', manifest_url: '/r0.json', error: null },
      { ordinal: 1, image_url: null, manifest_url: null, error: 'boom' },
      { ordinal: 2, image_url: '/r2.png', manifest_url: '/r2.json', error: null },
    ];
    session.cells[1].imported_from = [0, 3];
    const vm = cellViewModel(withSession(emptyState(), session), 1);
    expect(vm.latestImageUrl).toBe('/r2.png');
    expect(vm.lineage).toBe('cell 0 / result 3');
  });

  it('shows progress only while the cell is busy', () => {
    const session = readySession();
    session.cells[0].status = 'running';
    let state = withSession(emptyState(), session);
    state = withProgress(state, 0, [7, 50]);
    expect(cellViewModel(state, 0).progressText).toBe('7/50');
    session.cells[0].status = 'done';
    expect(cellViewModel(withSession(state, session), 0).progressText).toBeNull();
  });

  it('surfaces the extraction error as a banner', () => {
    const failed = readySession({ status: 'failed', error: 'no salient object; give a prompt' });
    expect(withSession(emptyState(), failed).banner).toContain('no salient object');
  });
});

describe('importSources', () => {
  it('offers only other cells that have a successful result', () => {
    const session = readySession();
    session.cells[0].results = [
      { ordinal: 0, image_url: '/r.png', manifest_url: '/r.json', error: null },
    ];
    session.cells[3].results = [
      { ordinal: 0, image_url: null, manifest_url: null, error: 'failed' },
    ];
    const state = withSession(emptyState(), session);
    expect(importSources(state, 1)).toEqual([0]);
    expect(importSources(state, 0)).toEqual([]); // never import from yourself
  });
});
