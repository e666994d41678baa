/** Controller: wires the API client, polling, the store, and the view.
 * All service interaction goes through the documented endpoints; steering a
 * finished run always creates a child run via rerun. */

import type { EditApi } from './api.js';
import { NotFoundError } from './api.js';
import { clampRatio, clampTheta } from './mask.js';
import { pollRun, type PollOptions } from './poll.js';
import { AppStore, type RunView } from './state.js';
import type { ApiRun, MaskBitmap, RerunOverrides } from './types.js';
import { TERMINAL_STATUSES } from './types.js';
import { buildForm, renderDynamic, type CompareTransform, type ViewHandlers } from './view.js';

export interface AppDeps {
  api: EditApi;
  /** Decodes a binary-mask artifact into a bitmap (canvas in the browser,
   * scripted in tests).  Optional: without it subset badges are skipped. */
  loadMask?: (url: string) => Promise<MaskBitmap>;
  /** Paints the client-side red overlay; returns true when painted. */
  paintOverlay?: (canvas: HTMLCanvasElement, view: RunView) => boolean;
  pollOptions?: PollOptions;
}

export class App {
  readonly store = new AppStore();
  private readonly dynamicRoot: HTMLElement;
  private readonly compareTransform: CompareTransform = { scale: 1, x: 0, y: 0 };
  private retryAction: (() => void) | null = null;
  private readonly polling = new Set<string>();

  constructor(
    root: HTMLElement,
    private readonly deps: AppDeps,
  ) {
    const handlers = this.handlers();
    root.replaceChildren();
    root.append(buildForm(handlers));
    this.dynamicRoot = document.createElement('div');
    root.append(this.dynamicRoot);
    this.store.subscribe(() => renderDynamic(this.dynamicRoot, this.store, handlers, this.compareTransform));
    renderDynamic(this.dynamicRoot, this.store, handlers, this.compareTransform);
  }

  private handlers(): ViewHandlers {
    return {
      onSubmit: (file, instruction, maskSource) => void this.submit(file, instruction, maskSource),
      onSliderInput: (id, patch) => this.store.setSlider(id, patch),
      onRerunTheta: (id) => void this.rerunTheta(id),
      onRerunRatio: (id) => void this.rerunRatio(id),
      onRerunMaskSource: (id, source) => void this.rerunWith(id, { mask_source: source }),
      onToggleCompare: (id) => this.store.toggleCompare(id),
      onRetry: () => this.retry(),
      paintOverlay: this.deps.paintOverlay,
      artifactUrl: (run, name) => this.deps.api.artifactUrl(run, name),
    };
  }

  async submit(file: Blob, instruction: string, maskSource: 'segmenter' | 'diffedit' = 'segmenter'): Promise<void> {
    try {
      const overrides = maskSource === 'diffedit' ? { mask_source: maskSource } : {};
      const run = await this.deps.api.submitEdit(file, instruction, overrides);
      this.store.setConnectivityError(null);
      this.track(run);
    } catch (error) {
      this.retryAction = () => void this.submit(file, instruction, maskSource);
      this.store.setConnectivityError(error instanceof Error ? error.message : String(error));
    }
  }

  /** Record a snapshot and keep polling until the run is terminal. */
  private track(run: ApiRun): void {
    this.store.upsert(run);
    if (TERMINAL_STATUSES.has(run.status)) {
      void this.maybeLoadMask(run);
      return;
    }
    if (this.polling.has(run.id)) return;
    this.polling.add(run.id);
    pollRun(
      (id) => this.deps.api.getRun(id),
      run.id,
      (snapshot) => this.store.upsert(snapshot),
      this.deps.pollOptions,
    )
      .then((finished) => void this.maybeLoadMask(finished))
      .catch((error) => {
        if (error instanceof NotFoundError) {
          // stale id: the run vanished server-side, clear it from the view
          this.store.remove(run.id);
        } else {
          this.retryAction = () => this.track(run);
          this.store.setConnectivityError(error instanceof Error ? error.message : String(error));
        }
      })
      .finally(() => this.polling.delete(run.id));
  }

  private async maybeLoadMask(run: ApiRun): Promise<void> {
    if (!this.deps.loadMask || run.status !== 'done') return;
    const url = this.deps.api.artifactUrl(run, 'mask');
    if (!url) return;
    try {
      this.store.attachMask(run.id, await this.deps.loadMask(url));
    } catch {
      // subset badges and client overlays degrade gracefully
    }
  }

  private steerNote(id: string, message: string): void {
    const note = document.querySelector(`[data-testid="steer-note-${id}"]`);
    if (note) note.textContent = message;
  }

  async rerunTheta(id: string): Promise<void> {
    const theta = clampTheta(this.store.slidersFor(id).theta);
    if (theta === null) {
      this.steerNote(id, 'θ must lie strictly between 0 and 1');
      return;
    }
    await this.rerunWith(id, { theta });
  }

  async rerunRatio(id: string): Promise<void> {
    const ratio = clampRatio(this.store.slidersFor(id).ratio);
    if (ratio === null) {
      this.steerNote(id, 'encoding ratio must lie in (0, 1]');
      return;
    }
    await this.rerunWith(id, { encoding_ratio: ratio });
  }

  async rerunWith(id: string, overrides: RerunOverrides): Promise<void> {
    try {
      const child = await this.deps.api.rerun(id, overrides);
      this.store.setConnectivityError(null);
      this.track(child);
    } catch (error) {
      if (error instanceof NotFoundError) {
        this.store.remove(id);
        return;
      }
      this.retryAction = () => void this.rerunWith(id, overrides);
      this.store.setConnectivityError(error instanceof Error ? error.message : String(error));
    }
  }

  private retry(): void {
    const action = this.retryAction;
    this.retryAction = null;
    this.store.setConnectivityError(null);
    action?.();
  }
}

export function createApp(root: HTMLElement, deps: AppDeps): App {
  return new App(root, deps);
}
