// Input-to-motion mapping: screen-plane steering plus keys/wheel for depth.

import type { Arm, ClientMsg } from "./protocol.js";

export const DRAG_GAIN_M_PER_PX = 0.0002; // 1 px drag = 0.2 mm
export const KEY_STEP_M = 0.001;          // 1 mm per key press

export interface Delta {
  dx_m: number;
  dy_m: number;
  dz_m: number;
}

export function dragToDelta(dxPx: number, dyPx: number,
                            gain = DRAG_GAIN_M_PER_PX): Delta {
  return { dx_m: dxPx * gain, dy_m: dyPx * gain, dz_m: 0 };
}

export function keyToDelta(key: string, step = KEY_STEP_M): Delta | null {
  switch (key) {
    case "ArrowLeft": return { dx_m: -step, dy_m: 0, dz_m: 0 };
    case "ArrowRight": return { dx_m: step, dy_m: 0, dz_m: 0 };
    case "ArrowUp": return { dx_m: 0, dy_m: -step, dz_m: 0 };
    case "ArrowDown": return { dx_m: 0, dy_m: step, dz_m: 0 };
    case "PageUp": return { dx_m: 0, dy_m: 0, dz_m: -step };
    case "PageDown": return { dx_m: 0, dy_m: 0, dz_m: step };
    default: return null;
  }
}

export function wheelToDepth(deltaY: number, step = KEY_STEP_M): Delta {
  return { dx_m: 0, dy_m: 0, dz_m: Math.sign(deltaY) * step };
}

/** Coalesces steering input and emits at most one command per service tick. */
export class CommandThrottle {
  private pending: Delta = { dx_m: 0, dy_m: 0, dz_m: 0 };
  private dirty = false;

  constructor(private readonly send: (msg: ClientMsg) => boolean,
              public arm: Arm = "left") {}

  add(delta: Delta): void {
    this.pending.dx_m += delta.dx_m;
    this.pending.dy_m += delta.dy_m;
    this.pending.dz_m += delta.dz_m;
    this.dirty = true;
  }

  /** Called once per tick interval; returns true when a command went out. */
  flush(): boolean {
    if (!this.dirty) return false;
    const { dx_m, dy_m, dz_m } = this.pending;
    this.pending = { dx_m: 0, dy_m: 0, dz_m: 0 };
    this.dirty = false;
    return this.send({ type: "command", arm: this.arm, dx_m, dy_m, dz_m });
  }

  toggleArm(): Arm {
    this.arm = this.arm === "left" ? "right" : "left";
    return this.arm;
  }
}
