/** Integration against a scripted loopback WebSocket server.
 *
 * The script mimics the live server's protocol: hello on connect, 60 Hz pose
 * stream, claim_control/control handling, style telemetry echoing the active
 * selection. No real model runs here; poses are synthetic.
 */
import { AddressInfo, WebSocketServer } from "ws";
import WebSocket from "ws";
import { afterEach, beforeEach, describe, expect, it } from "vitest";
import { Steering } from "../src/input.js";
import { SessionClient, SocketLike } from "../src/session.js";

const HELLO = {
  type: "hello",
  skeleton: {
    names: Array.from({ length: 25 }, (_, i) => `j${i}`),
    parents: [-1, ...Array.from({ length: 24 }, (_, i) => Math.floor(i / 2))],
    offsets: Array.from({ length: 25 }, () => [0, 0, 0]),
    feet: [5, 6],
    end_effectors: [3, 4, 5, 6],
  },
  styles: ["march", "slouch", "strut"],
  fps: 60,
};

interface Scripted {
  server: WebSocketServer;
  url: string;
  stop: () => void;
}

function scriptedServer(): Promise<Scripted> {
  const server = new WebSocketServer({ port: 0, host: "127.0.0.1" });
  let controller: WebSocket | null = null;
  let control = { dir: [0, 0], speed: 0, gait: "idle", style: null as null | { mode: string; id?: string } };
  let tick = 0;
  const root = [0, 0, 0, 0];

  const interval = setInterval(() => {
    root[2] += (control.speed / 60) * (control.dir[1] ?? 0);
    const pose = {
      type: "pose",
      tick: tick++,
      root: [...root],
      joints: Array.from({ length: 25 }, () => [0, 1, root[2], 0, 0, 0, 1]),
      contacts: [1, 0],
      style_telemetry: control.style?.id ?? "",
    };
    const line = JSON.stringify(pose);
    for (const ws of server.clients) ws.send(line);
  }, 1000 / 60);

  server.on("connection", (ws) => {
    ws.send(JSON.stringify(HELLO));
    ws.on("message", (raw) => {
      const msg = JSON.parse(String(raw));
      if (msg.type === "claim_control") {
        if (controller === null || controller === ws) controller = ws;
        else ws.send(JSON.stringify({ type: "error", message: "control already claimed" }));
      } else if (msg.type === "control") {
        if (controller !== ws) {
          ws.send(JSON.stringify({ type: "error", message: "not the controller" }));
        } else {
          control = { dir: msg.dir, speed: msg.speed, gait: msg.gait, style: msg.style ?? null };
        }
      }
    });
    ws.on("close", () => {
      if (controller === ws) controller = null;
    });
  });

  return new Promise((resolve) => {
    server.on("listening", () => {
      const { port } = server.address() as AddressInfo;
      resolve({
        server,
        url: `ws://127.0.0.1:${port}`,
        stop: () => {
          clearInterval(interval);
          server.close();
          for (const ws of server.clients) ws.terminate();
        },
      });
    });
  });
}

function connect(url: string): SocketLike {
  return new WebSocket(url) as unknown as SocketLike;
}

function waitFor(predicate: () => boolean, timeoutMs: number): Promise<void> {
  const start = Date.now();
  return new Promise((resolve, reject) => {
    const poll = () => {
      if (predicate()) return resolve();
      if (Date.now() - start > timeoutMs) return reject(new Error("timeout"));
      setTimeout(poll, 5);
    };
    poll();
  });
}

describe("loopback session", () => {
  let scripted: Scripted;
  let client: SessionClient;

  beforeEach(async () => {
    scripted = await scriptedServer();
    client = new SessionClient(() => connect(scripted.url));
    await waitFor(() => client.hello !== null, 2000);
  });

  afterEach(() => {
    client.close();
    scripted.stop();
  });

  it("completes the handshake and streams increasing ticks", async () => {
    expect(client.hello!.skeleton.names.length).toBe(25);
    await waitFor(() => client.poses.peekTick() > 5, 2000);
    const first = client.poses.take()!;
    await waitFor(() => client.poses.peekTick() > first.tick, 2000);
    expect(client.poses.take()!.tick).toBeGreaterThan(first.tick);
  });

  it("reflects a key press in pose telemetry within 200 ms", async () => {
    client.claimControl();
    const steering = new Steering();
    steering.style = { mode: "single", id: "strut" };
    steering.keyDown("KeyW");

    const pressedAt = Date.now();
    client.sendControl(steering.poll(0, pressedAt)!);

    await waitFor(() => {
      const pose = client.poses.take();
      return pose !== null && pose.style_telemetry === "strut" && pose.root[2] > 0;
    }, 200);
    expect(Date.now() - pressedAt).toBeLessThanOrEqual(200);
  });

  it("second client cannot steer and gets an explanatory error", async () => {
    const errors: string[] = [];
    const second = new SessionClient(() => connect(scripted.url), {
      onError: (m) => errors.push(m),
    });
    await waitFor(() => second.hello !== null, 2000);
    client.claimControl();
    await new Promise((r) => setTimeout(r, 30));
    second.sendControl({ type: "control", dir: [0, 1], speed: 1.5, gait: "walk" });
    await waitFor(() => errors.some((m) => m.includes("not the controller")), 2000);
    second.close();
  });

  it("keeps memory flat over a compressed long session", async () => {
    // 10 simulated minutes of frames (36k poses) pushed as fast as the
    // server emits them; the one-slot cell must not accumulate anything.
    await waitFor(() => client.poses.peekTick() > 30, 2000);
    const before = process.memoryUsage().heapUsed;
    for (let t = 0; t < 36000; t++) {
      client.poses.offer({
        type: "pose",
        tick: 1000 + t,
        root: [0, 0, 0, 0],
        joints: Array.from({ length: 25 }, () => [0, 1, 0, 0, 0, 0, 1]),
        contacts: [0, 0],
        style_telemetry: "",
      });
    }
    const grown = process.memoryUsage().heapUsed - before;
    expect(grown).toBeLessThan(32 * 1024 * 1024);
    expect(client.poses.take()!.tick).toBe(36999);
    expect(client.poses.take()).toBeNull();
  });
});
