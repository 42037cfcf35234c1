/** Wire protocol: line-delimited JSON messages over a WebSocket. */

export interface SkeletonDesc {
  names: string[];
  parents: number[]; // -1 for the root
  offsets: number[][];
  feet: number[];
  end_effectors: number[];
}

export interface HelloMessage {
  type: "hello";
  skeleton: SkeletonDesc;
  styles: string[];
  fps: number;
}

export interface PoseMessage {
  type: "pose";
  tick: number;
  root: [number, number, number, number]; // x, y, z, yaw
  joints: number[][]; // per joint: [px, py, pz, qx, qy, qz, qw]
  contacts: [number, number];
  style_telemetry: string;
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export type ServerMessage = HelloMessage | PoseMessage | ErrorMessage;

export type Gait = "idle" | "walk" | "run";

export interface StyleSelection {
  mode: "single" | "triangle";
  id?: string;
  ids?: [string, string, string];
  lambda?: [number, number, number];
}

export interface ControlMessage {
  type: "control";
  dir: [number, number];
  speed: number;
  gait: Gait;
  style?: StyleSelection;
}

export function parseServerMessage(raw: string): ServerMessage {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    throw new ProtocolError(`unparseable message: ${raw.slice(0, 80)}`);
  }
  if (typeof msg !== "object" || msg === null || !("type" in msg)) {
    throw new ProtocolError("message without a type field");
  }
  const type = (msg as { type: unknown }).type;
  if (type === "hello" || type === "pose" || type === "error") {
    return msg as ServerMessage;
  }
  throw new ProtocolError(`unknown message type ${String(type)}`);
}

export class ProtocolError extends Error {}

/** Tree with n joints has n-1 bones; the root has parent -1. */
export function boneList(skeleton: SkeletonDesc): Array<[number, number]> {
  const bones: Array<[number, number]> = [];
  skeleton.parents.forEach((parent, child) => {
    if (parent >= 0) bones.push([parent, child]);
  });
  return bones;
}
