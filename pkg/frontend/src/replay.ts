// Input scripts: a recorded list of client messages pinned to service ticks.
// Replaying one against a seeded service reproduces the session log bitwise,
// because the service applies each message at its recorded tick.

import type { SessionClient } from "./client.js";
import type { ClientMsg } from "./protocol.js";

export interface ScriptedMessage {
  atTick: number;
  msg: ClientMsg;
}

export interface InputScript {
  messages: ScriptedMessage[];
  runUntilSeq: number;
}

function withTick(msg: ClientMsg, atTick: number): ClientMsg {
  if (msg.type === "command" || msg.type === "trial") {
    return { ...msg, at_tick: atTick } as ClientMsg;
  }
  return msg;
}

/**
 * Send every scripted message up front (ticks are explicit, ordering does
 * not depend on arrival time), watch frames until runUntilSeq, then leave.
 */
export function replayScript(client: SessionClient, script: InputScript,
                             timeoutMs = 120_000): Promise<void> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error("replay timed out")), timeoutMs);
    const finish = () => {
      clearTimeout(timer);
      client.close();
      resolve();
    };
    let sent = false;
    const tick = () => {
      if (client.state === "open" && !sent) {
        sent = true;
        for (const item of script.messages) {
          client.send(withTick(item.msg, item.atTick));
        }
      }
      if (client.latest !== null && client.latest.seq >= script.runUntilSeq) {
        finish();
        return;
      }
      if (client.state === "closed") {
        clearTimeout(timer);
        reject(new Error("connection closed before the script finished"));
        return;
      }
      setTimeout(tick, 5);
    };
    tick();
  });
}
