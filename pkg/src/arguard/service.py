"""Interactive frame service for the operator console.

One live session at a time: the simulator ticks at a fixed virtual rate
(wall-clock limited by processing), each tick runs the full pipeline and
streams a frame message; the client steers the instruments, marks trials,
and submits usability forms over the same socket. All messages are JSON;
frames embed the overlaid left view as a base64 PNG.

Determinism: session time is tick_index / tick_hz, commands are applied at
explicit tick indices and recorded into the session log, so replaying a
recorded command stream against the same seed reproduces the log bitwise.
"""

from __future__ import annotations

import asyncio
import base64
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from websockets.asyncio.server import serve as ws_serve

from .geometry import invert
from .pipeline import (Pipeline, PipelineConfig, estimated_transforms,
                       exact_transforms, make_pre_op_model)
from .proximity import InstrumentModel
from .reconstruction import DepthProvider, MaskProvider
from .session import (SessionError, SessionLog, collision_count, d_mean,
                      d_min, execution_time, path_length, sus_score,
                      write_session_jsonl)
from .simscene import (SceneConfig, SceneSimulator, apply_noise,
                       default_hand_hand, default_scene, perturb_point,
                       scene_home_positions)

SCHEMA_VERSION = 1
PICKUP_RADIUS_M = 0.008
MAX_STEP_M = 0.02  # per-command displacement clamp


class InteractiveSource(DepthProvider, MaskProvider):
    """Frame source whose instrument state is driven by queued commands."""

    def __init__(self, scene: SceneConfig, seed: int = 0, tick_hz: float = 30.0,
                 noise=None, t_ee1_ee2_true=None):
        self.sim = SceneSimulator(scene)
        self.scene = scene
        self.seed = seed
        self.tick_hz = tick_hz
        self.noise = noise
        self.t_hh_true = t_ee1_ee2_true or default_hand_hand()
        home = scene_home_positions(scene)
        self.positions = {"left": home["left_home"].copy(),
                          "right": home["right_home"].copy()}
        self.rcms = {"left": home["left_rcm"], "right": home["right_rcm"]}
        self.grasp = {"left": False, "right": False}
        self.picked: set[int] = set()
        self._queued: dict[int, list[dict]] = {}
        self._events: list[dict] = []
        self._cache: dict = {}

    def n_frames(self) -> int:
        return 1 << 31

    def time_of(self, i: int) -> float:
        return i / self.tick_hz

    # -- command handling ----------------------------------------------------

    def queue(self, msg: dict, next_tick: int) -> int:
        """Schedule a command or marker; returns the tick it will apply at.

        next_tick is the first tick that has not started processing yet;
        explicit at_tick values in the past are pulled forward to it.
        """
        at = max(int(msg.get("at_tick", next_tick)), next_tick)
        self._queued.setdefault(at, []).append(msg)
        return at

    def _apply_command(self, cmd: dict, tick: int) -> None:
        arm = cmd.get("arm", "left")
        if arm not in self.positions:
            return
        delta = np.array([cmd.get("dx_m", 0.0), cmd.get("dy_m", 0.0),
                          cmd.get("dz_m", 0.0)], dtype=np.float64)
        delta = np.clip(delta, -MAX_STEP_M, MAX_STEP_M)
        self.positions[arm] = self.positions[arm] + delta
        logged = {"event": "command", "arm": arm, "at_tick": tick,
                  "dx_m": float(delta[0]), "dy_m": float(delta[1]),
                  "dz_m": float(delta[2])}
        if "grasp" in cmd and cmd["grasp"] is not None:
            want = bool(cmd["grasp"])
            if want and not self.grasp[arm]:
                node = self._nearest_active_node(self.positions[arm])
                if node is not None:
                    self.picked.add(node)
                    self.sim.set_node_active(node, False)
                    self._events.append({"event": "node_pickup",
                                         "node": int(node), "arm": arm})
            self.grasp[arm] = want
            logged["grasp"] = want
        self._events.append(logged)

    def _nearest_active_node(self, pos: np.ndarray) -> Optional[int]:
        best = None
        best_d = PICKUP_RADIUS_M
        for idx, center in enumerate(self.scene.node_centers):
            if idx in self.picked:
                continue
            d = float(np.linalg.norm(center - pos))
            if d <= best_d:
                best = idx
                best_d = d
        return best

    def advance_to(self, tick: int) -> list[dict]:
        """Apply everything queued for this tick; returns marker events."""
        self._events = []
        markers = []
        for msg in self._queued.pop(tick, []):
            if msg["type"] == "command":
                self._apply_command(msg, tick)
            elif msg["type"] == "trial":
                name = "trial_start" if msg["action"] == "start" else "trial_end"
                marker = {"event": name, "modality": msg.get("modality")}
                self._events.append(marker)
                markers.append(marker)
        self._cache = {}
        return markers

    # -- frame source interface ----------------------------------------------

    def _instrument_models(self) -> dict[str, InstrumentModel]:
        return {
            "left": InstrumentModel(ee=self.positions["left"],
                                    rcm=self.rcms["left"]),
            "right": InstrumentModel(ee=self.positions["right"],
                                     rcm=self.rcms["right"]),
        }

    def _frame(self, i: int) -> dict:
        if i in self._cache:
            return self._cache[i]
        models = self._instrument_models()
        views = self.sim.render(models)
        if self.noise is not None:
            views = apply_noise(views, self.noise, self.seed, i)
        sigma = self.noise.pose_sigma_m if self.noise else 0.0
        rng = np.random.default_rng([self.seed, i, 17])
        inv_hh = invert(self.t_hh_true)
        frame = {
            "views": views,
            "left_raw": InstrumentModel(
                ee=inv_hh.apply(perturb_point(models["left"].ee, sigma, rng)),
                rcm=inv_hh.apply(perturb_point(models["left"].rcm, sigma, rng))),
            "right": InstrumentModel(
                ee=perturb_point(models["right"].ee, sigma, rng),
                rcm=perturb_point(models["right"].rcm, sigma, rng)),
        }
        self._cache = {i: frame}
        return frame

    def images(self, i: int):
        f = self._frame(i)
        return f["views"].left_image, f["views"].right_image

    def disparity(self, i: int):
        return self._frame(i)["views"].disp_gt

    def mask(self, i: int):
        return self._frame(i)["views"].mask_gt

    def instruments(self, i: int) -> dict:
        f = self._frame(i)
        return {"left_raw": f["left_raw"], "right": f["right"]}

    def frame_events(self, i: int) -> list:
        return list(self._events)


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    seed: int = 0
    modality: str = "experiment"
    tick_hz: float = 30.0
    out_dir: Optional[str] = None
    send_png: bool = True
    calibration: str = "exact"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)


def _png_b64(rgb: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, format="PNG", compress_level=1)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _error(code: str, message: str) -> str:
    return json.dumps({"type": "error", "code": code, "message": message})


def _trial_metrics(log: SessionLog) -> dict:
    try:
        t_exe = execution_time(log)
    except SessionError:
        t_exe = None
    sub = log
    out = {"t_exe_s": t_exe}
    try:
        out["d_min_m"] = d_min(sub)
    except SessionError:
        out["d_min_m"] = None
    out["d_mean_m"] = d_mean(sub)
    out["collision_count"] = collision_count(sub)
    out["path_length_m"] = path_length(sub)
    return out


class FrameService:
    """Owns the single live session; see module docstring for the protocol."""

    def __init__(self, config: ServiceConfig, scene: Optional[SceneConfig] = None):
        self.config = config
        self.scene = scene or default_scene()
        self.busy = False
        self.done = asyncio.Event()

    def _build_pipeline(self) -> tuple[Pipeline, InteractiveSource]:
        cfg = self.config.pipeline
        cfg.seed = self.config.seed
        cfg.modality = self.config.modality
        cfg.tick_hz = self.config.tick_hz
        t_hh_true = default_hand_hand()
        noise = cfg.noise if cfg.provider == "noisy" else None
        source = InteractiveSource(self.scene, seed=self.config.seed,
                                   tick_hz=self.config.tick_hz, noise=noise,
                                   t_ee1_ee2_true=t_hh_true)
        if self.config.calibration == "estimate":
            calibrated, _ = estimated_transforms(self.scene,
                                                 cfg.calibration_noise,
                                                 seed=self.config.seed,
                                                 t_ee1_ee2_true=t_hh_true)
        else:
            calibrated = exact_transforms(self.scene, t_hh_true)
        pre_op, _ = make_pre_op_model(self.scene, seed=self.config.seed)
        return Pipeline(cfg, source, calibrated, pre_op), source

    async def handler(self, websocket) -> None:
        if self.busy:
            await websocket.send(_error("busy", "a session is already active"))
            await websocket.close()
            return
        self.busy = True
        try:
            await self._run_session(websocket)
        finally:
            self.busy = False
            self.done.set()

    async def _run_session(self, websocket) -> None:
        pipeline, source = self._build_pipeline()
        trial = {"state": "idle", "start_tick": None}
        stop_ticks: list[int] = []

        await websocket.send(json.dumps({
            "type": "hello", "schema": SCHEMA_VERSION,
            "tick_hz": self.config.tick_hz, "seed": self.config.seed,
            "modality": pipeline.config.modality,
            "pickups_total": len(self.scene.node_centers)}))

        seq = 0
        try:
            while True:
                tick_started = asyncio.get_event_loop().time()
                if not await self._drain_messages(websocket, pipeline,
                                                  source, trial, stop_ticks):
                    break
                markers = source.advance_to(seq)
                for marker in markers:
                    if marker["event"] == "trial_start":
                        trial["state"] = "running"
                        trial["start_tick"] = seq
                        if marker.get("modality"):
                            pipeline.config.modality = marker["modality"]
                            pipeline.log.modality = marker["modality"]
                    elif marker["event"] == "trial_end":
                        trial["state"] = "idle"
                result = pipeline.process_frame(seq)
                msg = {
                    "type": "frame", "seq": seq, "t_s": result.t_s,
                    "modality": pipeline.config.modality,
                    "d_left_m": result.proximity.d_left_m,
                    "d_right_m": result.proximity.d_right_m,
                    "left_zone": result.gauge.left_zone if result.gauge else None,
                    "right_zone": result.gauge.right_zone if result.gauge else None,
                    "model_color": list(result.gauge.model_color)
                    if result.gauge else None,
                    "picked": len(source.picked),
                    "pickups_total": len(self.scene.node_centers),
                    "events": result.events,
                }
                if self.config.send_png:
                    msg["png_left"] = _png_b64(result.left_overlay)
                await websocket.send(json.dumps(msg))
                while stop_ticks and seq >= stop_ticks[0]:
                    stop_ticks.pop(0)
                    start = trial["start_tick"] or 0
                    sub = SessionLog(modality=pipeline.log.modality,
                                     seed=pipeline.log.seed,
                                     records=pipeline.log.records[start:seq + 1])
                    await websocket.send(json.dumps(
                        {"type": "trial_result",
                         "metrics": _trial_metrics(sub)}))
                seq += 1
                elapsed = asyncio.get_event_loop().time() - tick_started
                await asyncio.sleep(max(1.0 / self.config.tick_hz - elapsed, 0))
        except Exception:
            pass
        finally:
            if self.config.out_dir:
                out = Path(self.config.out_dir)
                out.mkdir(parents=True, exist_ok=True)
                write_session_jsonl(pipeline.log, out / "session.jsonl")

    async def _drain_messages(self, websocket, pipeline, source, trial,
                              stop_ticks) -> bool:
        """Handle every message already queued on the socket; returns False
        once the peer is gone."""
        while True:
            try:
                raw = await asyncio.wait_for(websocket.recv(), timeout=0.001)
            except asyncio.TimeoutError:
                return True
            except Exception:
                return False
            await self._handle_message(raw, websocket, pipeline, source,
                                       trial, stop_ticks)

    async def _handle_message(self, raw, websocket, pipeline, source,
                              trial, stop_ticks):
        try:
            msg = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError):
            await websocket.send(_error("bad_json", "message is not valid JSON"))
            return
        mtype = msg.get("type")
        next_tick = len(pipeline.log.records)
        if mtype == "command":
            source.queue(msg, next_tick)
        elif mtype == "trial":
            action = msg.get("action")
            if action == "start":
                if trial["state"] != "idle":
                    await websocket.send(_error("trial_active",
                                                "a trial is already running"))
                    return
                trial["state"] = "pending_start"
                source.queue(msg, next_tick)
            elif action == "stop":
                if trial["state"] not in ("running", "pending_start"):
                    await websocket.send(_error("no_trial",
                                                "no trial is running"))
                    return
                trial["state"] = "pending_stop"
                at = source.queue(msg, next_tick)
                stop_ticks.append(at)
            else:
                await websocket.send(_error("bad_trial_action",
                                            f"unknown action {action!r}"))
        elif mtype == "sus":
            try:
                score = sus_score(msg.get("answers", []))
            except SessionError as e:
                await websocket.send(_error("bad_sus", str(e)))
                return
            await websocket.send(json.dumps({"type": "sus_result",
                                             "score": score}))
        elif mtype == "bye":
            await websocket.close()
        else:
            await websocket.send(_error("bad_type",
                                        f"unknown message type {mtype!r}"))


async def serve_async(config: ServiceConfig,
                      scene: Optional[SceneConfig] = None,
                      announce=print) -> None:
    """Listen, serve exactly one interactive session, then return."""
    service = FrameService(config, scene)
    async with ws_serve(service.handler, config.host, config.port) as server:
        port = server.sockets[0].getsockname()[1]
        announce(f"SERVICE_LISTENING port={port}", flush=True)
        await service.done.wait()


def serve(config: ServiceConfig, scene: Optional[SceneConfig] = None) -> None:
    asyncio.run(serve_async(config, scene))
