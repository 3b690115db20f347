import { cellViewModels, type CellViewModel, type StudioState } from './state.js';

function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

function renderCell(vm: CellViewModel): string {
  const image = vm.latestImageUrl
    ? `<img class="result" src="${esc(vm.latestImageUrl)}" alt="result for cell ${vm.index}">`
    : `<div class="result placeholder">no result yet</div>`;
  const lineage = vm.lineage
    ? `<div class="lineage">imported from ${esc(vm.lineage)}</div>`
    : '';
  const progress = vm.progressText
    ? `<div class="progress">${esc(vm.progressText)}</div>`
    : '';
  const error = vm.error ? `<div class="error">${esc(vm.error)}</div>` : '';
  const history = vm.promptHistory.length
    ? `<ul class="history">${vm.promptHistory.map((p) => `<li>${esc(p)}</li>`).join('')}</ul>`
    : '';
  return `
    <div class="cell status-${vm.status}" data-cell="${vm.index}">
      <div class="badge">${vm.status}</div>
      ${image}
      ${lineage}
      ${progress}
      ${error}
      <input class="prompt" data-cell="${vm.index}" value="${esc(vm.draft)}"
             placeholder="describe the new object">
      <button class="generate" data-cell="${vm.index}" ${vm.canGenerate ? '' : 'disabled'}>
        Generate
      </button>
      <button class="import" data-cell="${vm.index}" ${vm.canImportFrom ? '' : 'disabled'}>
        Import
      </button>
      ${history}
    </div>`;
}

export function render(state: StudioState): string {
  const session = state.session;
  const banner = state.banner
    ? `<div class="banner">${esc(state.banner)}</div>`
    : '';
  const source = session
    ? `<img class="source" src="${esc(session.source_url)}" alt="source image">
       <div class="session-status">${session.status}</div>`
    : `<div class="upload-hint">Upload the original object image to begin.</div>`;
  const left = `
    <div class="panel left">
      ${source}
      <form id="upload">
        <input type="file" id="file" accept="image/*">
        <input type="text" id="caption" placeholder="caption (optional)">
        <input type="text" id="object-prompt" placeholder="object prompt (optional)">
        <button type="submit">Upload</button>
      </form>
      ${banner}
    </div>`;
  const cells = cellViewModels(state).map(renderCell).join('');
  const disabled = session?.status === 'ready' ? '' : ' disabled';
  return `${left}<div class="panel grid${disabled}">${cells}</div>`;
}
