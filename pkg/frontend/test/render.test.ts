import { describe, expect, it } from 'vitest';
import { render } from '../src/render';
import { emptyState, withDraft, withSession } from '../src/state';
import type { SessionView } from '../src/types';

const session = (over: Partial<SessionView> = {}): SessionView => ({
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
});

describe('render', () => {
  it('always renders six cells', () => {
    for (const state of [emptyState(), withSession(emptyState(), session())]) {
      const html = render(state);
      for (let i = 0; i < 6; i++) expect(html).toContain(`data-cell="${i}"`);
      expect(html.match(/class="cell /g)).toHaveLength(6);
    }
  });

  it('disables the grid until the session is ready', () => {
    expect(render(emptyState())).toContain('grid disabled');
    expect(render(withSession(emptyState(), session({ status: 'extracting' })))).toContain(
      'grid disabled',
    );
    expect(render(withSession(emptyState(), session()))).not.toContain('grid disabled');
  });

  it('shows the failure banner and keeps all generate buttons disabled', () => {
    const failed = session({ status: 'failed', error: 'no salient object; give a prompt' });
    const html = render(withDraft(withSession(emptyState(), failed), 0, 'a vase'));
    expect(html).toContain('class="banner"');
    expect(html).toContain('no salient object; give a prompt');
    expect(html.match(/class="generate"[^>]*disabled/g)).toHaveLength(6);
  });

  it('shows result image, lineage and prompt history', () => {
    const s = session();
    s.cells[2].status = 'done';
    s.cells[2].results = [
      { ordinal: 0, image_url: '/results/s1/cells/2/result_0.png', manifest_url: null, error: null },
    ];
    s.cells[2].prompt_history = ['a glass vase'];
    s.cells[2].imported_from = [0, 1];
    const html = render(withSession(emptyState(), s));
    expect(html).toContain('src="/results/s1/cells/2/result_0.png"');
    expect(html).toContain('imported from cell 0 / result 1');
    expect(html).toContain('<li>a glass vase</li>');
  });

  it('escapes user-controlled text', () => {
    const html = render(withDraft(withSession(emptyState(), session()), 0, '<img onerror=x>'));
    expect(html).not.toContain('<img onerror=x>');
    expect(html).toContain('&lt;img onerror=x&gt;');
  });
});
