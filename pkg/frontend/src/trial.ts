// Trial bookkeeping around the service's start/stop markers.

import type { FrameMsg, Modality, TrialMetrics } from "./protocol.js";

export type TrialPhase = "idle" | "running" | "awaiting_metrics" | "finished";

export class TrialTracker {
  phase: TrialPhase = "idle";
  modality: Modality | null = null;
  startT: number | null = null;
  elapsedS = 0;
  picked = 0;
  metrics: TrialMetrics | null = null;

  start(modality: Modality, frame: FrameMsg | null): void {
    this.phase = "running";
    this.modality = modality;
    this.startT = frame ? frame.t_s : null;
    this.elapsedS = 0;
    this.picked = frame ? frame.picked : 0;
    this.metrics = null;
  }

  update(frame: FrameMsg): void {
    if (this.phase !== "running") return;
    if (this.startT === null) this.startT = frame.t_s;
    this.elapsedS = frame.t_s - this.startT;
    // Picked count is monotone within a trial: never display a regression.
    this.picked = Math.max(this.picked, frame.picked);
  }

  requestStop(): void {
    if (this.phase === "running") this.phase = "awaiting_metrics";
  }

  setMetrics(metrics: TrialMetrics): void {
    this.metrics = metrics;
    this.phase = "finished";
  }
}
