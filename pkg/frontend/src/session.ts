/** Connection state machine for the live session.
 *
 * Owns the socket, performs the hello handshake, feeds poses into a one-slot
 * latest-value cell, and tracks liveness: "stalled" turns on when no pose has
 * arrived for STALL_MS. Disconnects trigger reconnects with exponential
 * backoff; the view greys out meanwhile.
 */
import { LatestCell } from "./latest.js";
import {
  ControlMessage,
  HelloMessage,
  PoseMessage,
  parseServerMessage,
} from "./protocol.js";

export const STALL_MS = 500;
export const BACKOFF_BASE_MS = 250;
export const BACKOFF_MAX_MS = 8000;

export type ConnectionState = "connecting" | "live" | "stalled" | "disconnected";

/** The subset of WebSocket both browsers and the `ws` package provide. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev: any) => void) | null;
  onmessage: ((ev: any) => void) | null;
  onclose: ((ev: any) => void) | null;
  onerror: ((ev: any) => void) | null;
}

export interface SessionEvents {
  onState?: (state: ConnectionState) => void;
  onHello?: (hello: HelloMessage) => void;
  onError?: (message: string) => void;
}

export class SessionClient {
  readonly poses = new LatestCell<PoseMessage>();
  hello: HelloMessage | null = null;
  state: ConnectionState = "connecting";

  private socket: SocketLike | null = null;
  private attempts = 0;
  private lastPoseAt = -Infinity;
  private closed = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly connect: () => SocketLike,
    private readonly events: SessionEvents = {},
    private readonly now: () => number = () => Date.now(),
    private readonly schedule: (fn: () => void, ms: number) => ReturnType<typeof setTimeout> = setTimeout,
  ) {
    this.open();
  }

  private setState(state: ConnectionState): void {
    if (this.state === state) return;
    this.state = state;
    this.events.onState?.(state);
  }

  private open(): void {
    this.setState("connecting");
    const socket = this.connect();
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
    };
    socket.onmessage = (ev) => this.handleMessage(String(ev.data));
    socket.onerror = () => {};
    socket.onclose = () => {
      this.socket = null;
      if (!this.closed) this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    this.setState("disconnected");
    const delay = Math.min(BACKOFF_MAX_MS, BACKOFF_BASE_MS * 2 ** this.attempts);
    this.attempts += 1;
    this.reconnectTimer = this.schedule(() => {
      if (!this.closed) this.open();
    }, delay);
  }

  private handleMessage(raw: string): void {
    let msg;
    try {
      msg = parseServerMessage(raw);
    } catch (err) {
      this.events.onError?.(String(err));
      return;
    }
    if (msg.type === "hello") {
      this.hello = msg;
      this.events.onHello?.(msg);
      this.setState("live");
    } else if (msg.type === "pose") {
      this.poses.offer(msg);
      this.lastPoseAt = this.now();
      this.setState("live");
    } else {
      this.events.onError?.(msg.message);
    }
  }

  /** Called from the render loop; flips to "stalled" after a quiet STALL_MS. */
  tickLiveness(): ConnectionState {
    if (this.state === "live" && this.now() - this.lastPoseAt > STALL_MS) {
      this.setState("stalled");
    }
    return this.state;
  }

  claimControl(): void {
    this.socket?.send(JSON.stringify({ type: "claim_control" }));
  }

  sendControl(message: ControlMessage): void {
    this.socket?.send(JSON.stringify(message));
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.socket?.close();
    this.setState("disconnected");
  }
}
