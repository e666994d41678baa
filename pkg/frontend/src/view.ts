/** DOM rendering. The submit form is built once; the run timeline, compare
 * view, and banners re-render on every store change. */

import type { ApiRun } from './types.js';
import type { AppStore, RunView } from './state.js';
import { isSubset } from './mask.js';

export interface ViewHandlers {
  onSubmit(file: File, instruction: string, maskSource: 'segmenter' | 'diffedit'): void;
  onSliderInput(id: string, patch: { theta?: number; ratio?: number }): void;
  onRerunTheta(id: string): void;
  onRerunRatio(id: string): void;
  onRerunMaskSource(id: string, source: 'segmenter' | 'diffedit'): void;
  onToggleCompare(id: string): void;
  onRetry(): void;
  /** Paints the red mask overlay onto the canvas; absent or failing painters
   * fall back to the server-rendered overlay image. */
  paintOverlay?(canvas: HTMLCanvasElement, view: RunView): boolean;
  artifactUrl(run: ApiRun, name: string): string | null;
}

export interface CompareTransform {
  scale: number;
  x: number;
  y: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function buildForm(handlers: ViewHandlers): HTMLElement {
  const form = el('form', { class: 'submit-form', 'data-testid': 'submit-form' });
  const file = el('input', { type: 'file', accept: 'image/png,image/jpeg', 'data-testid': 'file-input' });
  const instruction = el('input', {
    type: 'text',
    placeholder: 'e.g. Change the red square to a blue square',
    'data-testid': 'instruction-input',
  });
  const source = el('select', { 'data-testid': 'mask-source-select' });
  source.append(el('option', { value: 'segmenter' }, 'segmenter mask'), el('option', { value: 'diffedit' }, 'diffedit mask'));
  const submit = el('button', { type: 'submit', 'data-testid': 'submit-button' }, 'Edit');
  const note = el('span', { class: 'form-note', 'data-testid': 'form-note' });
  form.append(file, instruction, source, submit, note);
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const chosen = file.files?.[0];
    if (!chosen) {
      note.textContent = 'choose an image first';
      return;
    }
    if (!instruction.value.trim()) {
      note.textContent = 'enter an instruction';
      return;
    }
    note.textContent = '';
    handlers.onSubmit(chosen, instruction.value.trim(), source.value as 'segmenter' | 'diffedit');
  });
  return form;
}

function stageLabel(run: ApiRun): string {
  switch (run.status) {
    case 'created':
    case 'parsing':
      return 'parsing instruction…';
    case 'masking':
      return 'computing mask…';
    case 'editing':
      return 'editing…';
    case 'done':
      return 'done';
    case 'failed':
      return 'failed';
  }
}

function renderError(run: ApiRun): HTMLElement {
  const box = el('div', { class: 'error-box', 'data-testid': 'error-box' });
  const stage = run.error?.stage ?? '?';
  const message = run.error?.message ?? 'unknown failure';
  box.append(el('strong', {}, `failed during ${stage}: `));
  const match = message.match(/^object not found: (.+)$/);
  if (match) {
    box.append(document.createTextNode('object not found: '));
    box.append(el('mark', { 'data-testid': 'error-query' }, match[1]));
  } else {
    box.append(document.createTextNode(message));
  }
  return box;
}

function renderPrompts(view: RunView): HTMLElement {
  const panel = el('dl', { class: 'prompts', 'data-testid': 'prompts' });
  const prompts = view.run.prompts;
  if (prompts) {
    panel.append(
      el('dt', {}, 'segmentation prompt'),
      el('dd', { 'data-testid': 'prompt-q' }, prompts.segmentation_prompt),
      el('dt', {}, 'input caption'),
      el('dd', { 'data-testid': 'prompt-ci' }, prompts.input_caption),
      el('dt', {}, 'edited caption'),
      el('dd', { 'data-testid': 'prompt-ce' }, prompts.edited_caption),
      el('dt', {}, 'source'),
      el('dd', {}, prompts.source),
    );
  }
  if (view.run.description) {
    panel.append(
      el('dt', {}, 'describer'),
      el('dd', { 'data-testid': 'description' }, view.run.description.text),
    );
  }
  return panel;
}

function renderTriptych(view: RunView, handlers: ViewHandlers): HTMLElement {
  const { run } = view;
  const triptych = el('div', { class: 'triptych', 'data-testid': 'triptych' });
  const inputUrl = handlers.artifactUrl(run, 'input');
  if (inputUrl) {
    const cell = el('figure', {}, undefined);
    cell.append(el('img', { src: inputUrl, alt: 'input', 'data-testid': 'input-img' }), el('figcaption', {}, 'input'));
    triptych.append(cell);
  }
  const overlayCell = el('figure', {});
  let painted = false;
  if (handlers.paintOverlay && view.maskBitmap) {
    const canvas = el('canvas', { 'data-testid': 'overlay-canvas' });
    painted = handlers.paintOverlay(canvas, view);
    if (painted) overlayCell.append(canvas);
  }
  if (!painted) {
    const overlayUrl = handlers.artifactUrl(run, 'mask_overlay');
    if (overlayUrl) {
      overlayCell.append(el('img', { src: overlayUrl, alt: 'mask overlay', 'data-testid': 'overlay-img' }));
    }
  }
  overlayCell.append(el('figcaption', {}, 'mask overlay'));
  triptych.append(overlayCell);
  const editedUrl = handlers.artifactUrl(run, 'edited');
  if (editedUrl) {
    const cell = el('figure', {});
    cell.append(el('img', { src: editedUrl, alt: 'edited', 'data-testid': 'edited-img' }), el('figcaption', {}, 'edited'));
    triptych.append(cell);
  }
  return triptych;
}

function renderSliders(view: RunView, store: AppStore, handlers: ViewHandlers): HTMLElement {
  const { run } = view;
  const sliders = store.slidersFor(run.id);
  const box = el('div', { class: 'steering', 'data-testid': 'steering' });

  const thetaLabel = el('label', {}, `θ ${sliders.theta.toFixed(2)} `);
  const theta = el('input', {
    type: 'range',
    min: '0.01',
    max: '0.99',
    step: '0.01',
    value: String(sliders.theta),
    'data-testid': 'theta-slider',
  });
  theta.addEventListener('input', () => handlers.onSliderInput(run.id, { theta: Number(theta.value) }));
  const thetaButton = el('button', { type: 'button', 'data-testid': 'rerun-theta' }, 'rerun with θ');
  thetaButton.addEventListener('click', () => handlers.onRerunTheta(run.id));
  thetaLabel.append(theta);

  const ratioLabel = el('label', {}, `r ${sliders.ratio.toFixed(2)} `);
  const ratio = el('input', {
    type: 'range',
    min: '0.05',
    max: '1',
    step: '0.05',
    value: String(sliders.ratio),
    'data-testid': 'ratio-slider',
  });
  ratio.addEventListener('input', () => handlers.onSliderInput(run.id, { ratio: Number(ratio.value) }));
  const ratioButton = el('button', { type: 'button', 'data-testid': 'rerun-ratio' }, 'rerun with r');
  ratioButton.addEventListener('click', () => handlers.onRerunRatio(run.id));
  ratioLabel.append(ratio);

  const maskSource = (view.run.mask?.['source'] as string) ?? 'segmenter';
  const toggle = el(
    'button',
    { type: 'button', 'data-testid': 'mask-source-toggle' },
    maskSource === 'diffedit' ? 'switch to segmenter mask' : 'switch to diffedit mask',
  );
  toggle.addEventListener('click', () =>
    handlers.onRerunMaskSource(run.id, maskSource === 'diffedit' ? 'segmenter' : 'diffedit'),
  );

  const note = el('span', { class: 'steer-note', 'data-testid': `steer-note-${run.id}` });
  box.append(thetaLabel, thetaButton, ratioLabel, ratioButton, toggle, note);
  return box;
}

function renderCard(view: RunView, store: AppStore, handlers: ViewHandlers): HTMLElement {
  const { run } = view;
  const card = el('article', { class: `run-card status-${run.status}`, 'data-testid': 'run-card', 'data-run-id': run.id });

  const header = el('header', {});
  header.append(el('span', { class: 'run-id' }, run.id));
  header.append(el('span', { class: 'status', 'data-testid': 'status' }, stageLabel(run)));
  if (run.parent_id) {
    header.append(el('span', { class: 'parent-link', 'data-testid': 'parent-link' }, `child of ${run.parent_id}`));
  }
  const settings = run.mask ? ` · mask: ${String(run.mask['source'] ?? '?')}` : '';
  header.append(el('span', { class: 'annotation' }, `${run.instruction ?? ''}${settings}`));
  const compare = el('input', { type: 'checkbox', 'data-testid': 'compare-toggle', title: 'select for A/B compare' });
  (compare as HTMLInputElement).checked = store.compareSelected(run.id);
  compare.addEventListener('change', () => handlers.onToggleCompare(run.id));
  header.append(compare);
  card.append(header);

  if (run.status === 'failed') {
    card.append(renderError(run));
    return card;
  }
  if (run.status !== 'done') {
    card.append(el('div', { class: 'spinner', 'data-testid': 'stage-indicator' }, stageLabel(run)));
    return card;
  }

  card.append(renderTriptych(view, handlers));
  card.append(renderPrompts(view));
  const parent = store.parentOf(run.id);
  if (parent?.maskBitmap && view.maskBitmap && isSubset(view.maskBitmap, parent.maskBitmap)) {
    card.append(el('span', { class: 'subset-badge', 'data-testid': 'subset-badge' }, 'mask ⊆ parent'));
  }
  for (const warning of run.warnings) {
    card.append(el('div', { class: 'warning' }, warning));
  }
  card.append(renderSliders(view, store, handlers));
  return card;
}

function applyTransform(img: HTMLElement, transform: CompareTransform): void {
  img.style.transform = `translate(${transform.x}px, ${transform.y}px) scale(${transform.scale})`;
}

function renderCompare(
  pair: [RunView, RunView],
  transform: CompareTransform,
  handlers: ViewHandlers,
): HTMLElement {
  const section = el('section', { class: 'compare', 'data-testid': 'compare-view' });
  section.append(el('h2', {}, `A/B compare: ${pair[0].run.id} vs ${pair[1].run.id}`));
  const panes = el('div', { class: 'compare-panes' });
  const images: HTMLElement[] = [];
  pair.forEach((view, index) => {
    const pane = el('div', { class: 'compare-pane', 'data-testid': `compare-pane-${index === 0 ? 'a' : 'b'}` });
    const url = handlers.artifactUrl(view.run, 'edited') ?? handlers.artifactUrl(view.run, 'input');
    const img = el('img', { src: url ?? '', alt: `run ${view.run.id}`, 'data-testid': 'compare-img' });
    applyTransform(img, transform);
    images.push(img);
    pane.append(img, el('span', { class: 'compare-label' }, view.run.id));
    panes.append(pane);
  });
  // synced zoom (wheel) and pan (drag) across both panes
  const sync = () => images.forEach((img) => applyTransform(img, transform));
  panes.addEventListener('wheel', (event) => {
    event.preventDefault();
    const factor = (event as WheelEvent).deltaY < 0 ? 1.2 : 1 / 1.2;
    transform.scale = Math.min(16, Math.max(0.25, transform.scale * factor));
    sync();
  });
  let dragging: { x: number; y: number } | null = null;
  panes.addEventListener('pointerdown', (event) => {
    dragging = { x: (event as PointerEvent).clientX - transform.x, y: (event as PointerEvent).clientY - transform.y };
  });
  panes.addEventListener('pointermove', (event) => {
    if (!dragging) return;
    transform.x = (event as PointerEvent).clientX - dragging.x;
    transform.y = (event as PointerEvent).clientY - dragging.y;
    sync();
  });
  panes.addEventListener('pointerup', () => {
    dragging = null;
  });
  section.append(panes);
  return section;
}

export function renderDynamic(
  container: HTMLElement,
  store: AppStore,
  handlers: ViewHandlers,
  compareTransform: CompareTransform,
): void {
  container.replaceChildren();

  if (store.connectivityError) {
    const banner = el('div', { class: 'banner error', 'data-testid': 'connectivity-error' });
    banner.append(el('span', {}, `service unreachable: ${store.connectivityError} `));
    const retry = el('button', { type: 'button', 'data-testid': 'retry' }, 'retry');
    retry.addEventListener('click', () => handlers.onRetry());
    banner.append(retry);
    container.append(banner);
  }

  const pair = store.comparePair();
  if (pair) container.append(renderCompare(pair, compareTransform, handlers));

  const history = el('section', { class: 'history', 'data-testid': 'history' });
  const views = store.all();
  if (views.length === 0) {
    history.append(el('p', { class: 'empty', 'data-testid': 'empty-state' }, 'no runs yet — submit an image and an instruction'));
  }
  for (const view of [...views].reverse()) {
    history.append(renderCard(view, store, handlers));
  }
  container.append(history);
}
