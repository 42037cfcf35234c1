/** three.js scene: joints as spheres, bones as line segments, contact discs.
 *
 * The render loop runs at display refresh and pulls the newest pose from the
 * session's latest-value cell; stream rate and render rate stay decoupled.
 */
import * as THREE from "three";
import { PoseMessage, SkeletonDesc, boneList } from "./protocol.js";

export class SkeletonView {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private joints: THREE.Mesh[] = [];
  private bones: Array<[number, number]> = [];
  private boneLines: THREE.LineSegments | null = null;
  private contactDiscs: THREE.Mesh[] = [];
  private followTarget = new THREE.Vector3();
  cameraYaw = 0;
  cameraDistance = 3.5;
  cameraHeight = 1.6;

  constructor(aspect: number) {
    this.camera = new THREE.PerspectiveCamera(55, aspect, 0.05, 100);
    this.scene.add(new THREE.HemisphereLight(0xffffff, 0x334455, 1.0));
    const ground = new THREE.Mesh(
      new THREE.PlaneGeometry(40, 40),
      new THREE.MeshBasicMaterial({ color: 0x20242a }),
    );
    ground.rotation.x = -Math.PI / 2;
    this.scene.add(ground);
    this.scene.add(new THREE.GridHelper(40, 40, 0x3a4150, 0x2a3038));
  }

  buildSkeleton(skeleton: SkeletonDesc): void {
    for (const joint of this.joints) this.scene.remove(joint);
    if (this.boneLines) this.scene.remove(this.boneLines);
    for (const disc of this.contactDiscs) this.scene.remove(disc);

    const jointGeo = new THREE.SphereGeometry(0.025, 12, 8);
    const jointMat = new THREE.MeshStandardMaterial({ color: 0x7fd0ff });
    this.joints = skeleton.names.map(() => {
      const mesh = new THREE.Mesh(jointGeo, jointMat);
      this.scene.add(mesh);
      return mesh;
    });

    this.bones = boneList(skeleton);
    const positions = new Float32Array(this.bones.length * 6);
    const geo = new THREE.BufferGeometry();
    geo.setAttribute("position", new THREE.BufferAttribute(positions, 3));
    this.boneLines = new THREE.LineSegments(
      geo,
      new THREE.LineBasicMaterial({ color: 0xd8e4f0 }),
    );
    this.scene.add(this.boneLines);

    const discGeo = new THREE.CircleGeometry(0.09, 20);
    this.contactDiscs = skeleton.feet.map(() => {
      const disc = new THREE.Mesh(
        discGeo,
        new THREE.MeshBasicMaterial({ color: 0x64ff9a, transparent: true, opacity: 0 }),
      );
      disc.rotation.x = -Math.PI / 2;
      this.scene.add(disc);
      return disc;
    });
  }

  applyPose(pose: PoseMessage, skeleton: SkeletonDesc): void {
    pose.joints.forEach(([px, py, pz], i) => {
      this.joints[i]?.position.set(px, py, pz);
    });
    if (this.boneLines) {
      const attr = this.boneLines.geometry.getAttribute("position") as THREE.BufferAttribute;
      this.bones.forEach(([parent, child], i) => {
        const [ax, ay, az] = pose.joints[parent];
        const [bx, by, bz] = pose.joints[child];
        attr.setXYZ(i * 2, ax, ay, az);
        attr.setXYZ(i * 2 + 1, bx, by, bz);
      });
      attr.needsUpdate = true;
    }
    skeleton.feet.forEach((foot, side) => {
      const disc = this.contactDiscs[side];
      const [fx, , fz] = pose.joints[foot];
      disc.position.set(fx, 0.002, fz);
      (disc.material as THREE.MeshBasicMaterial).opacity = pose.contacts[side];
    });
    this.followTarget.set(pose.root[0], 1.0, pose.root[2]);
    this.updateCamera();
  }

  updateCamera(): void {
    const t = this.followTarget;
    this.camera.position.set(
      t.x - Math.sin(this.cameraYaw) * this.cameraDistance,
      this.cameraHeight,
      t.z - Math.cos(this.cameraYaw) * this.cameraDistance,
    );
    this.camera.lookAt(t);
  }
}
