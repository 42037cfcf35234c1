/** Keyboard steering: WASD/arrows in camera-relative ground coordinates.
 *
 * Control messages go out at most every 50 ms and additionally whenever the
 * derived control changes; releasing every key sends a single idle message.
 */
import { ControlMessage, Gait, StyleSelection } from "./protocol.js";

export const SEND_INTERVAL_MS = 50;
export const WALK_SPEED = 1.5;
export const RUN_SPEED = 4.0;

const KEY_DIRS: Record<string, [number, number]> = {
  KeyW: [0, 1],
  ArrowUp: [0, 1],
  KeyS: [0, -1],
  ArrowDown: [0, -1],
  KeyA: [-1, 0],
  ArrowLeft: [-1, 0],
  KeyD: [1, 0],
  ArrowRight: [1, 0],
};

export interface SteeringSnapshot {
  dir: [number, number];
  speed: number;
  gait: Gait;
}

export class Steering {
  private held = new Set<string>();
  private running = false;
  private lastSent: string | null = null;
  private lastSendTime = -Infinity;
  style: StyleSelection | null = null;

  keyDown(code: string): void {
    if (code === "ShiftLeft" || code === "ShiftRight") this.running = true;
    else if (code in KEY_DIRS) this.held.add(code);
  }

  keyUp(code: string): void {
    if (code === "ShiftLeft" || code === "ShiftRight") this.running = false;
    else this.held.delete(code);
  }

  /** Camera-relative steering: cameraYaw rotates the key vector onto the ground plane. */
  snapshot(cameraYaw: number): SteeringSnapshot {
    let x = 0;
    let z = 0;
    for (const code of this.held) {
      const [dx, dz] = KEY_DIRS[code];
      x += dx;
      z += dz;
    }
    if (x === 0 && z === 0) {
      return { dir: [0, 0], speed: 0, gait: "idle" };
    }
    const norm = Math.hypot(x, z);
    const cos = Math.cos(cameraYaw);
    const sin = Math.sin(cameraYaw);
    const dir: [number, number] = [
      (cos * x + sin * z) / norm,
      (-sin * x + cos * z) / norm,
    ];
    return this.running
      ? { dir, speed: RUN_SPEED, gait: "run" }
      : { dir, speed: WALK_SPEED, gait: "walk" };
  }

  /** Returns a message to send now, or null (unchanged and inside the rate cap). */
  poll(cameraYaw: number, nowMs: number): ControlMessage | null {
    const snap = this.snapshot(cameraYaw);
    const message: ControlMessage = {
      type: "control",
      dir: snap.dir,
      speed: snap.speed,
      gait: snap.gait,
      ...(this.style ? { style: this.style } : {}),
    };
    const encoded = JSON.stringify(message);
    const changed = encoded !== this.lastSent;
    if (nowMs - this.lastSendTime < SEND_INTERVAL_MS) return null; // rate cap
    // Send on change; while actively steering also keep the server fresh.
    // An unchanged idle is sent exactly once.
    if (!changed && snap.gait === "idle") return null;
    this.lastSent = encoded;
    this.lastSendTime = nowMs;
    return message;
  }
}
