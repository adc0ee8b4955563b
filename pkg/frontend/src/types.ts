/** JSON shapes exchanged with the motion-diffusion HTTP service. */

/** N rows of C channel values. */
export type Frames = number[][];

export interface ModelInfo {
  name: string;
  variant: string;
  motion_channels: number;
  schedule_T: number;
  schedule_kind: string;
  subjects: string[];
}

export interface SequenceInfo {
  id: string;
  kind: string;
  frames: number;
  channels: number;
  fps: number;
  subject: string;
}

export interface SequencePayload extends SequenceInfo {
  data: Frames;
}

export interface SynthesizeRequest {
  model: string;
  length: number;
  seed?: number;
  scale?: number;
  count?: number;
  subject?: string | null;
  audio?: Frames | null;
  fps?: number;
}

export interface GeneratedSequence {
  data: Frames;
  kind: string;
  fps: number;
  subject: string;
}

export interface SynthesizeResponse {
  request: SynthesizeRequest;
  elapsed_ms: number;
  sequences: GeneratedSequence[];
}

export interface EditRequest {
  model: string;
  sequence?: string | null;
  frames?: Frames | null;
  mask?: number[] | null;
  keyframes?: Record<number, number[]> | null;
  seed?: number;
  scale?: number;
  audio?: Frames | null;
  fps?: number;
}

export interface BoundaryReport {
  max_boundary_delta: number;
  median_generated_delta: number;
  ratio: number;
  warning: boolean;
}

export interface EditResponse {
  request: EditRequest;
  elapsed_ms: number;
  data: Frames;
  kind: string;
  fps: number;
  boundary: BoundaryReport;
}
