/** Client-side run state: wire snapshots plus slider values and the compare
 * selection.  Slider values live here and are only sent on an explicit rerun
 * action; terminal runs are never mutated, steering always creates children. */

import type { ApiRun, MaskBitmap } from './types.js';

export interface SliderState {
  theta: number;
  ratio: number;
}

export interface RunView {
  run: ApiRun;
  maskBitmap?: MaskBitmap;
}

export type Listener = () => void;

const DEFAULT_SLIDERS: SliderState = { theta: 0.3, ratio: 0.8 };

export class AppStore {
  private runs = new Map<string, RunView>();
  private order: string[] = [];
  private sliders = new Map<string, SliderState>();
  private compareSelection: string[] = [];
  private listeners = new Set<Listener>();
  connectivityError: string | null = null;

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  upsert(run: ApiRun): void {
    if (!this.runs.has(run.id)) this.order.push(run.id);
    const existing = this.runs.get(run.id);
    this.runs.set(run.id, { run, maskBitmap: existing?.maskBitmap });
    this.emit();
  }

  attachMask(id: string, bitmap: MaskBitmap): void {
    const view = this.runs.get(id);
    if (!view) return;
    this.runs.set(id, { ...view, maskBitmap: bitmap });
    this.emit();
  }

  remove(id: string): void {
    this.runs.delete(id);
    this.order = this.order.filter((runId) => runId !== id);
    this.compareSelection = this.compareSelection.filter((runId) => runId !== id);
    this.emit();
  }

  setConnectivityError(message: string | null): void {
    this.connectivityError = message;
    this.emit();
  }

  get(id: string): RunView | undefined {
    return this.runs.get(id);
  }

  all(): RunView[] {
    return this.order.map((id) => this.runs.get(id)!).filter(Boolean);
  }

  parentOf(id: string): RunView | undefined {
    const parentId = this.runs.get(id)?.run.parent_id;
    return parentId ? this.runs.get(parentId) : undefined;
  }

  slidersFor(id: string): SliderState {
    const existing = this.sliders.get(id);
    if (existing) return existing;
    const run = this.runs.get(id)?.run;
    const settings = (run?.mask ?? {}) as Record<string, unknown>;
    const fresh: SliderState = {
      theta: typeof settings['theta'] === 'number' ? (settings['theta'] as number) : DEFAULT_SLIDERS.theta,
      ratio: DEFAULT_SLIDERS.ratio,
    };
    this.sliders.set(id, fresh);
    return fresh;
  }

  setSlider(id: string, patch: Partial<SliderState>): void {
    this.sliders.set(id, { ...this.slidersFor(id), ...patch });
    this.emit();
  }

  toggleCompare(id: string): void {
    if (this.compareSelection.includes(id)) {
      this.compareSelection = this.compareSelection.filter((runId) => runId !== id);
    } else {
      this.compareSelection = [...this.compareSelection, id].slice(-2);
    }
    this.emit();
  }

  comparePair(): [RunView, RunView] | null {
    if (this.compareSelection.length !== 2) return null;
    const [a, b] = this.compareSelection.map((id) => this.runs.get(id));
    return a && b ? [a, b] : null;
  }

  compareSelected(id: string): boolean {
    return this.compareSelection.includes(id);
  }
}
