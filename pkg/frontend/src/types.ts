// Payload shapes for the annotation service API (schema_version 1).

export interface FrameInfo {
  x_min: number;
  x_max: number;
  y_min: number;
  y_max: number;
  z_min: number;
  z_max: number;
  pixel_size: number;
}

export interface EncodedObservation {
  schema_version: number;
  color_png_b64: string;
  height_zlib_b64: string;
  shape: [number, number];
  frame: FrameInfo;
}

export interface PixelPose {
  u: number;
  v: number;
  rot: number;
  k: number;
}

export interface SessionPayload {
  schema_version: number;
  session_id?: string;
  observation: EncodedObservation;
  instruction: string;
  score: number;
  steps: number;
  done: boolean;
  k_pick: number;
  k_place: number;
  pending_pick: PixelPose | null;
  status?: string;
}

export interface FinishPayload {
  schema_version: number;
  episode_dir: string;
  final_score: number;
  n_steps: number;
  source: string;
}

export interface OverlayPayload {
  schema_version: number;
  head: "pick" | "place";
  k: number;
  slice: number;
  argmax: PixelPose;
  map_zlib_b64: string;
  shape: [number, number];
}

export interface MetaPayload {
  schema_version: number;
  tasks: string[];
  splits: string[];
  k_pick: number;
  k_place: number;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}
