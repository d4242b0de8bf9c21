// Draw-op executor for the browser. Everything visual flows through the ops
// produced by renderModel, so hiding the AR widgets in control mode is a
// property of the data, not of scattered if-statements here.

import type { DrawOp } from "./view.js";

export interface ConsoleDom {
  video: HTMLImageElement;
  hud: HTMLCanvasElement;
  status: HTMLElement;
}

const ZONE_COLORS: Record<string, string> = {
  SAFE: "#3fae6a",
  RISK: "#d23c3c",
};

export function executeOps(dom: ConsoleDom, ops: DrawOp[]): void {
  const ctx = dom.hud.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, dom.hud.width, dom.hud.height);
  const statusLines: string[] = [];
  for (const op of ops) {
    switch (op.kind) {
      case "video":
        dom.video.src = `data:image/png;base64,${op.pngBase64}`;
        break;
      case "status":
        statusLines.push(op.text);
        break;
      case "gauge":
        drawGauge(ctx, dom.hud.width, op);
        break;
      case "zoneBadge": {
        const x = op.side === "left" ? 12 : dom.hud.width - 70;
        ctx.fillStyle = ZONE_COLORS[op.zone] ?? "#888";
        ctx.fillRect(x, 108, 58, 18);
        ctx.fillStyle = "#fff";
        ctx.font = "12px monospace";
        ctx.fillText(op.zone, x + 12, 121);
        break;
      }
    }
  }
  dom.status.textContent = statusLines.join("  |  ");
}

function drawGauge(ctx: CanvasRenderingContext2D, width: number,
                   op: Extract<DrawOp, { kind: "gauge" }>): void {
  const radius = 44;
  const cx = op.side === "left" ? radius + 14 : width - radius - 14;
  const cy = radius + 14;
  ctx.lineWidth = 8;
  ctx.strokeStyle = "#555";
  ctx.beginPath();
  ctx.arc(cx, cy, radius, Math.PI, 2 * Math.PI);
  ctx.stroke();
  if (op.fraction !== null) {
    ctx.strokeStyle = op.zone === "RISK" ? ZONE_COLORS.RISK : ZONE_COLORS.SAFE;
    ctx.beginPath();
    ctx.arc(cx, cy, radius, Math.PI, Math.PI * (1 + op.fraction));
    ctx.stroke();
  }
  ctx.fillStyle = "#eee";
  ctx.font = "13px monospace";
  ctx.fillText(op.label, cx - 18, cy + 18);
}
