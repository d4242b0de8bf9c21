// Session client: one socket, a latest-frame mailbox, reconnect with backoff.
// The UI never computes metrics or distances; every displayed number comes
// from a server message held here.

import { ClientMsg, FrameMsg, HelloMsg, ServerMsg, TrialMetrics,
         parseServerMsg } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionState = "idle" | "connecting" | "open" | "retrying" | "closed";

export interface ClientHandlers {
  onHello?: (msg: HelloMsg) => void;
  onFrame?: (msg: FrameMsg) => void;
  onSusResult?: (score: number) => void;
  onTrialResult?: (metrics: TrialMetrics) => void;
  onServerError?: (code: string, message: string) => void;
  onState?: (state: ConnectionState, retryInMs: number | null) => void;
}

export interface ClientOptions {
  wsFactory?: SocketFactory;
  reconnectBaseMs?: number;
  reconnectCapMs?: number;
  handlers?: ClientHandlers;
}

const defaultFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as SocketLike;

export class SessionClient {
  state: ConnectionState = "idle";
  hello: HelloMsg | null = null;
  /** Latest-frame mailbox: stale frames are replaced, never queued. */
  latest: FrameMsg | null = null;
  lastSeq = -1;
  droppedCommands = 0;
  duplicatesDropped = 0;

  private socket: SocketLike | null = null;
  private retries = 0;
  private closedByUs = false;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(private readonly url: string,
              private readonly options: ClientOptions = {}) {}

  private get handlers(): ClientHandlers {
    return this.options.handlers ?? {};
  }

  connect(): void {
    this.closedByUs = false;
    this.open();
  }

  private setState(state: ConnectionState, retryInMs: number | null = null): void {
    this.state = state;
    this.handlers.onState?.(state, retryInMs);
  }

  private open(): void {
    const factory = this.options.wsFactory ?? defaultFactory;
    this.setState("connecting");
    const sock = factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.retries = 0;
      this.setState("open");
    };
    sock.onmessage = (ev) => {
      const msg = parseServerMsg(String(ev.data));
      if (msg) this.dispatch(msg);
    };
    sock.onerror = () => { /* onclose follows and handles retry */ };
    sock.onclose = () => {
      this.socket = null;
      if (this.closedByUs) {
        this.setState("closed");
        return;
      }
      const base = this.options.reconnectBaseMs ?? 500;
      const cap = this.options.reconnectCapMs ?? 10_000;
      const delay = Math.min(base * 2 ** this.retries, cap);
      this.retries += 1;
      this.setState("retrying", delay);
      this.retryTimer = setTimeout(() => this.open(), delay);
    };
  }

  private dispatch(msg: ServerMsg): void {
    switch (msg.type) {
      case "hello":
        this.hello = msg;
        this.handlers.onHello?.(msg);
        break;
      case "frame":
        // Reconnects must not render duplicates: sequence stays monotone.
        if (msg.seq <= this.lastSeq) {
          this.duplicatesDropped += 1;
          return;
        }
        this.lastSeq = msg.seq;
        this.latest = msg;
        this.handlers.onFrame?.(msg);
        break;
      case "sus_result":
        this.handlers.onSusResult?.(msg.score);
        break;
      case "trial_result":
        this.handlers.onTrialResult?.(msg.metrics);
        break;
      case "error":
        this.handlers.onServerError?.(msg.code, msg.message);
        break;
    }
  }

  /** Returns false (and counts the drop) when not connected. */
  send(msg: ClientMsg): boolean {
    if (this.state !== "open" || this.socket === null) {
      this.droppedCommands += 1;
      return false;
    }
    this.socket.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.closedByUs = true;
    if (this.retryTimer !== null) clearTimeout(this.retryTimer);
    if (this.socket) {
      try {
        this.send({ type: "bye" });
      } finally {
        this.socket.close();
      }
    } else {
      this.setState("closed");
    }
  }
}
