/** Entry point: wires the session, steering, triangle widget and renderer.
 *
 * URL query parameters: ?server=ws://host:port&mode=controller|observer
 */
import * as THREE from "three";
import { Steering } from "./input.js";
import { SessionClient } from "./session.js";
import { SkeletonView } from "./render.js";
import { TriangleWidget } from "./triangle.js";

const params = new URLSearchParams(window.location.search);
const serverUrl = params.get("server") ?? "ws://127.0.0.1:7361";
const isController = (params.get("mode") ?? "controller") === "controller";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const badge = document.getElementById("badge") as HTMLElement;
const hint = document.getElementById("hint") as HTMLElement;
const triangleCanvas = document.getElementById("triangle") as HTMLCanvasElement;

const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
renderer.setSize(window.innerWidth, window.innerHeight);
const view = new SkeletonView(window.innerWidth / window.innerHeight);
window.addEventListener("resize", () => {
  renderer.setSize(window.innerWidth, window.innerHeight);
  view.camera.aspect = window.innerWidth / window.innerHeight;
  view.camera.updateProjectionMatrix();
});

const steering = new Steering();
let widget: TriangleWidget | null = null;

const session = new SessionClient(
  () => new WebSocket(serverUrl),
  {
    onState: (state) => {
      badge.textContent = state;
      badge.className = state;
      canvas.style.opacity = state === "live" ? "1" : "0.4";
    },
    onHello: (hello) => {
      view.buildSkeleton(hello.skeleton);
      if (isController) session.claimControl();
      if (hello.styles.length >= 3) {
        widget = new TriangleWidget(
          [hello.styles[0], hello.styles[1], hello.styles[2]],
          [{ x: 0.5, y: 0.08 }, { x: 0.95, y: 0.9 }, { x: 0.05, y: 0.9 }],
        );
        drawTriangle();
      }
    },
    onError: (message) => {
      if (message.includes("not the controller")) {
        hint.textContent = "observer mode: control is held by another client";
        hint.style.display = "block";
      }
    },
  },
);

if (isController) {
  window.addEventListener("keydown", (ev) => {
    if (!ev.repeat) steering.keyDown(ev.code);
  });
  window.addEventListener("keyup", (ev) => steering.keyUp(ev.code));
}

function drawTriangle(cursor?: { x: number; y: number }): void {
  if (!widget) return;
  const ctx = triangleCanvas.getContext("2d")!;
  const w = triangleCanvas.width;
  const h = triangleCanvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#d8e4f0";
  ctx.beginPath();
  const [a, b, c] = widget.vertices;
  ctx.moveTo(a.x * w, a.y * h);
  ctx.lineTo(b.x * w, b.y * h);
  ctx.lineTo(c.x * w, c.y * h);
  ctx.closePath();
  ctx.stroke();
  ctx.fillStyle = "#8aa0b8";
  ctx.font = "11px sans-serif";
  widget.styles.forEach((name, i) => {
    const v = widget!.vertices[i];
    ctx.fillText(name, v.x * w - 12, v.y * h - 6);
  });
  if (cursor) {
    ctx.fillStyle = "#64ff9a";
    ctx.beginPath();
    ctx.arc(cursor.x * w, cursor.y * h, 4, 0, Math.PI * 2);
    ctx.fill();
  }
}

let dragging = false;
triangleCanvas.addEventListener("pointerdown", (ev) => {
  dragging = true;
  pickStyle(ev);
});
triangleCanvas.addEventListener("pointermove", (ev) => {
  if (dragging) pickStyle(ev);
});
window.addEventListener("pointerup", () => {
  dragging = false;
});

function pickStyle(ev: PointerEvent): void {
  if (!widget) return;
  const rect = triangleCanvas.getBoundingClientRect();
  const cursor = widget.clamp({
    x: (ev.clientX - rect.left) / rect.width,
    y: (ev.clientY - rect.top) / rect.height,
  });
  steering.style = widget.selection(cursor);
  drawTriangle(cursor);
}

function frame(): void {
  session.tickLiveness();
  const pose = session.poses.take();
  if (pose && session.hello) {
    view.applyPose(pose, session.hello.skeleton);
  }
  if (isController) {
    const message = steering.poll(view.cameraYaw, performance.now());
    if (message) session.sendControl(message);
  }
  renderer.render(view.scene, view.camera);
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
