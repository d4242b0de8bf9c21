// Browser bootstrap: wires DOM input to the session client and paints the
// latest frame. Static-file deployable; the service address is a form field.

import { SessionClient } from "./client.js";
import { executeOps } from "./canvas.js";
import { CommandThrottle, dragToDelta, keyToDelta, wheelToDepth } from "./gain.js";
import type { FrameMsg, Modality } from "./protocol.js";
import { SusForm } from "./sus.js";
import { TrialTracker } from "./trial.js";
import { renderModel } from "./view.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const dom = {
    video: el<HTMLImageElement>("video"),
    hud: el<HTMLCanvasElement>("hud"),
    status: el<HTMLElement>("status"),
  };
  const metricsBox = el<HTMLElement>("metrics");
  const susBox = el<HTMLElement>("sus-score");
  const armBox = el<HTMLElement>("active-arm");

  let client: SessionClient | null = null;
  let modality: Modality = "experiment";
  const trial = new TrialTracker();
  const sus = new SusForm();
  let throttle: CommandThrottle | null = null;
  let flushTimer: number | null = null;

  const repaint = (frame: FrameMsg | null) => {
    const ops = renderModel({
      connection: client?.state ?? "idle",
      retryInMs: null,
      frame,
    }, modality);
    executeOps(dom, ops);
    if (trial.phase === "running" && frame) trial.update(frame);
  };

  el<HTMLButtonElement>("connect").onclick = () => {
    const url = el<HTMLInputElement>("url").value;
    client?.close();
    client = new SessionClient(url, {
      handlers: {
        onHello: (hello) => {
          modality = hello.modality;
          throttle = new CommandThrottle((msg) => client!.send(msg));
          if (flushTimer !== null) clearInterval(flushTimer);
          flushTimer = window.setInterval(() => throttle?.flush(),
                                          1000 / hello.tick_hz);
        },
        onFrame: (frame) => repaint(frame),
        onState: () => repaint(client?.latest ?? null),
        onTrialResult: (metrics) => {
          trial.setMetrics(metrics);
          metricsBox.textContent = JSON.stringify(metrics, null, 1);
        },
        onSusResult: (score) => {
          sus.serverScore = score;
          susBox.textContent = `score: ${score}`;
        },
        onServerError: (code, message) => {
          dom.status.textContent = `service error ${code}: ${message}`;
        },
      },
    });
    client.connect();
  };

  el<HTMLButtonElement>("trial-start").onclick = () => {
    modality = el<HTMLInputElement>("modality-control").checked
      ? "control" : "experiment";
    client?.send({ type: "trial", action: "start", modality });
    trial.start(modality, client?.latest ?? null);
  };
  el<HTMLButtonElement>("trial-stop").onclick = () => {
    client?.send({ type: "trial", action: "stop" });
    trial.requestStop();
  };

  dom.hud.addEventListener("pointermove", (ev) => {
    if (ev.buttons === 1 && throttle) {
      throttle.add(dragToDelta(ev.movementX, ev.movementY));
    }
  });
  dom.hud.addEventListener("wheel", (ev) => {
    throttle?.add(wheelToDepth(ev.deltaY));
    ev.preventDefault();
  });
  window.addEventListener("keydown", (ev) => {
    if (ev.key === "Tab") {
      if (throttle) armBox.textContent = throttle.toggleArm();
      ev.preventDefault();
      return;
    }
    if (ev.key === " ") {
      client?.send({ type: "command", arm: throttle?.arm ?? "left",
                     grasp: true });
      ev.preventDefault();
      return;
    }
    if (ev.key === "r") {
      client?.send({ type: "command", arm: throttle?.arm ?? "left",
                     grasp: false });
      return;
    }
    const delta = keyToDelta(ev.key);
    if (delta && throttle) {
      throttle.add(delta);
      ev.preventDefault();
    }
  });

  const form = el<HTMLElement>("sus-form");
  for (let q = 0; q < 10; q += 1) {
    const row = document.createElement("div");
    row.textContent = `Q${q + 1} `;
    for (let v = 1; v <= 5; v += 1) {
      const btn = document.createElement("button");
      btn.textContent = String(v);
      btn.onclick = () => {
        sus.setAnswer(q, v);
        row.dataset.answer = String(v);
        el<HTMLButtonElement>("sus-submit").disabled = !sus.complete;
      };
      row.appendChild(btn);
    }
    form.appendChild(row);
  }
  const submit = el<HTMLButtonElement>("sus-submit");
  submit.disabled = true;
  submit.onclick = () => {
    if (sus.complete) client?.send(sus.toMessage());
  };
}

window.addEventListener("DOMContentLoaded", main);
