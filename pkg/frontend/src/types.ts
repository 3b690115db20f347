// Wire types mirroring the REST service payloads.

export interface ResultView {
  ordinal: number;
  image_url: string | null;
  manifest_url: string | null;
  error: string | null;
}

export interface CellView {
  index: number;
  status: 'empty' | 'queued' | 'running' | 'done' | 'failed';
  prompt_history: string[];
  results: ResultView[];
  imported_from: [number, number] | null;
}

export interface SessionView {
  id: string;
  caption: string;
  object_prompt: string | null;
  status: 'extracting' | 'ready' | 'failed';
  error: string | null;
  reconstruction_psnr: number | null;
  source_url: string;
  created_at: number;
  updated_at: number;
  cells: CellView[];
}

export interface JobView {
  id: string;
  session_id: string;
  cell_index: number | null;
  kind: 'extract' | 'generate';
  state: 'queued' | 'running' | 'done' | 'failed';
  progress: [number, number];
  phase: string;
  error: string | null;
  result_url: string | null;
}

export interface GenerateBody {
  prompt: string;
  guidance_scale?: number;
  seed?: number;
  start_step?: number;
  ramp_end_step?: number;
  start_layer?: number;
  lambda_max?: number;
  mask_gated?: boolean;
  blend_start_step?: number;
  blend?: boolean;
}
