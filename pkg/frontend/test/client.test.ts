import { describe, expect, it } from "vitest";

import { SessionClient, SocketLike } from "../src/client.js";
import { CommandThrottle, DRAG_GAIN_M_PER_PX, dragToDelta,
         keyToDelta } from "../src/gain.js";
import type { ClientMsg } from "../src/protocol.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  send(data: string): void { this.sent.push(data); }
  close(): void { this.closed = true; this.onclose?.(); }

  serverSays(obj: unknown): void {
    this.onmessage?.({ data: JSON.stringify(obj) });
  }
}

function frameMsg(seq: number) {
  return { type: "frame", seq, t_s: seq / 30, modality: "experiment",
           d_left_m: 0.02, d_right_m: 0.03, left_zone: "SAFE",
           right_zone: "SAFE", model_color: [150, 170, 210], picked: 0,
           pickups_total: 10, events: [] };
}

describe("SessionClient", () => {
  function connected() {
    const sockets: FakeSocket[] = [];
    const client = new SessionClient("ws://x", {
      wsFactory: () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
      reconnectBaseMs: 1,
    });
    client.connect();
    sockets[0].onopen?.();
    return { client, sockets };
  }

  it("commands are dropped with a count while disconnected", () => {
    const client = new SessionClient("ws://x", { wsFactory: () => new FakeSocket() });
    expect(client.send({ type: "command", arm: "left", dx_m: 0.01 })).toBe(false);
    expect(client.droppedCommands).toBe(1);
  });

  it("keeps only the latest frame and drops duplicates", () => {
    const { client, sockets } = connected();
    sockets[0].serverSays(frameMsg(0));
    sockets[0].serverSays(frameMsg(1));
    sockets[0].serverSays(frameMsg(1));
    expect(client.latest?.seq).toBe(1);
    expect(client.duplicatesDropped).toBe(1);
  });

  it("reconnects with backoff and never re-renders old sequence numbers", async () => {
    const { client, sockets } = connected();
    sockets[0].serverSays(frameMsg(4));
    sockets[0].onclose?.();
    expect(client.state).toBe("retrying");
    await new Promise((r) => setTimeout(r, 5));
    expect(sockets.length).toBe(2);
    sockets[1].onopen?.();
    sockets[1].serverSays(frameMsg(3));  // stale replay from the stream
    expect(client.latest?.seq).toBe(4);
    sockets[1].serverSays(frameMsg(5));
    expect(client.latest?.seq).toBe(5);
    client.close();
  });

  it("routes sus and trial results to handlers", () => {
    const scores: number[] = [];
    const sockets: FakeSocket[] = [];
    const client = new SessionClient("ws://x", {
      wsFactory: () => { const s = new FakeSocket(); sockets.push(s); return s; },
      handlers: { onSusResult: (s) => scores.push(s) },
    });
    client.connect();
    sockets[0].onopen?.();
    sockets[0].serverSays({ type: "sus_result", score: 75.0 });
    expect(scores).toEqual([75.0]);
  });
});

describe("steering gain", () => {
  it("50 px drag equals 1 cm at the default gain", () => {
    const d = dragToDelta(50, 0);
    expect(d.dx_m).toBeCloseTo(0.01, 12);
    expect(DRAG_GAIN_M_PER_PX).toBe(0.0002);
  });

  it("keys move one millimeter", () => {
    expect(keyToDelta("ArrowRight")?.dx_m).toBe(0.001);
    expect(keyToDelta("ArrowUp")?.dy_m).toBe(-0.001);
    expect(keyToDelta("PageDown")?.dz_m).toBe(0.001);
    expect(keyToDelta("q")).toBeNull();
  });

  it("throttle coalesces input into one command per flush", () => {
    const sent: ClientMsg[] = [];
    const throttle = new CommandThrottle((msg) => { sent.push(msg); return true; });
    throttle.add(dragToDelta(10, 5));
    throttle.add(dragToDelta(15, -5));
    expect(throttle.flush()).toBe(true);
    expect(sent).toHaveLength(1);
    const cmd = sent[0];
    if (cmd.type !== "command") throw new Error("expected command");
    expect(cmd.dx_m).toBeCloseTo(25 * DRAG_GAIN_M_PER_PX, 12);
    expect(cmd.dy_m).toBeCloseTo(0, 12);
    expect(throttle.flush()).toBe(false);  // nothing pending
  });
});
