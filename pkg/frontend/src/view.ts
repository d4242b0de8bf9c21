// Pure render model: session state in, draw operations out. Keeping this a
// data transform makes the no-gauges-in-control property directly testable,
// and guarantees every displayed value is traceable to a server message.

import type { ConnectionState } from "./client.js";
import type { FrameMsg, Modality, Zone } from "./protocol.js";

export const GAUGE_RANGE_M = 0.06;

export type DrawOp =
  | { kind: "video"; pngBase64: string }
  | { kind: "gauge"; side: "left" | "right"; valueM: number | null;
      fraction: number | null; label: string; zone: Zone | null }
  | { kind: "zoneBadge"; side: "left" | "right"; zone: Zone }
  | { kind: "status"; text: string };

export function formatCm(valueM: number | null): string {
  if (valueM === null) return "-";
  return `${(valueM * 100).toFixed(1)}cm`;
}

export function clampGauge(valueM: number | null): number | null {
  if (valueM === null) return null;
  return Math.min(valueM, GAUGE_RANGE_M);
}

export interface SessionView {
  connection: ConnectionState;
  retryInMs: number | null;
  frame: FrameMsg | null;
}

export function renderModel(view: SessionView, modality: Modality): DrawOp[] {
  const ops: DrawOp[] = [];
  if (view.connection !== "open") {
    const retry = view.retryInMs !== null
      ? ` (retrying in ${Math.round(view.retryInMs)}ms)` : "";
    ops.push({ kind: "status", text: `connection: ${view.connection}${retry}` });
  }
  const frame = view.frame;
  if (frame === null) return ops;
  if (frame.png_left) {
    ops.push({ kind: "video", pngBase64: frame.png_left });
  }
  ops.push({
    kind: "status",
    text: `seq ${frame.seq}  t ${frame.t_s.toFixed(2)}s  picked `
      + `${frame.picked}/${frame.pickups_total}`,
  });
  if (modality === "control") {
    // Standard endoscopic view: no gauge or zone drawing of any kind.
    return ops;
  }
  const sides: Array<["left" | "right", number | null, Zone | null]> = [
    ["left", frame.d_left_m, frame.left_zone],
    ["right", frame.d_right_m, frame.right_zone],
  ];
  for (const [side, value, zone] of sides) {
    const clamped = clampGauge(value);
    ops.push({
      kind: "gauge", side,
      valueM: value,
      fraction: clamped === null ? null : clamped / GAUGE_RANGE_M,
      label: formatCm(clamped),
      zone,
    });
    if (zone !== null) {
      ops.push({ kind: "zoneBadge", side, zone });
    }
  }
  return ops;
}
