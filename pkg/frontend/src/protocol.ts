// Message schema of the frame service (schema version 1). Field names carry
// units: _m meters, _s seconds, _px pixels.

export type Zone = "SAFE" | "RISK";
export type Modality = "control" | "experiment";
export type Arm = "left" | "right";

export interface HelloMsg {
  type: "hello";
  schema: number;
  tick_hz: number;
  seed: number;
  modality: Modality;
  pickups_total: number;
}

export interface FrameMsg {
  type: "frame";
  seq: number;
  t_s: number;
  modality: Modality;
  d_left_m: number | null;
  d_right_m: number | null;
  left_zone: Zone | null;
  right_zone: Zone | null;
  model_color: [number, number, number] | null;
  picked: number;
  pickups_total: number;
  events: Array<Record<string, unknown>>;
  png_left?: string;
}

export interface TrialMetrics {
  t_exe_s: number | null;
  d_min_m: number | null;
  d_mean_m: number | null;
  collision_count: number;
  path_length_m: number;
}

export type ServerMsg =
  | HelloMsg
  | FrameMsg
  | { type: "sus_result"; score: number }
  | { type: "trial_result"; metrics: TrialMetrics }
  | { type: "error"; code: string; message: string };

export type ClientMsg =
  | { type: "command"; arm: Arm; dx_m?: number; dy_m?: number; dz_m?: number;
      grasp?: boolean; at_tick?: number }
  | { type: "trial"; action: "start" | "stop"; modality?: Modality }
  | { type: "sus"; answers: number[] }
  | { type: "bye" };

export function parseServerMsg(data: string): ServerMsg | null {
  let obj: unknown;
  try {
    obj = JSON.parse(data);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) return null;
  const type = (obj as { type?: unknown }).type;
  if (type === "hello" || type === "frame" || type === "sus_result"
      || type === "trial_result" || type === "error") {
    return obj as ServerMsg;
  }
  return null;
}
