/** Wire types mirroring the service's run schema. */

export type RunStatus = 'created' | 'parsing' | 'masking' | 'editing' | 'done' | 'failed';

export const TERMINAL_STATUSES: ReadonlySet<RunStatus> = new Set(['done', 'failed']);

export interface ApiPrompts {
  segmentation_prompt: string;
  input_caption: string;
  edited_caption: string;
  source: string;
}

export interface ApiRunError {
  stage: string;
  message: string;
}

export interface ApiRun {
  id: string;
  status: RunStatus;
  parent_id: string | null;
  created_at: string;
  instruction: string | null;
  prompts: ApiPrompts | null;
  description: { kind: string; text: string } | null;
  artifacts: Record<string, string>;
  timings: Record<string, number>;
  metrics: Record<string, unknown>;
  mask: Record<string, unknown> | null;
  warnings: string[];
  error: ApiRunError | null;
}

/** One-bit-per-pixel mask decoded from a grayscale artifact. */
export interface MaskBitmap {
  width: number;
  height: number;
  data: Uint8Array;
}

export interface EditOverrides {
  encoding_ratio?: number;
  theta?: number;
  mask_source?: 'segmenter' | 'diffedit';
  seed?: number;
}

export interface RerunOverrides {
  theta?: number;
  encoding_ratio?: number;
  mask_source?: 'segmenter' | 'diffedit';
  instruction?: string;
}
