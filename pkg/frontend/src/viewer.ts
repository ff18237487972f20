/** three.js rendering of a parsed mesh: flat-shaded, orbit/zoom controls.
 * One Viewer instance per canvas; setMesh swaps geometry in place.
 */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";

import type { ParsedMesh } from "./obj";

export class Viewer {
  private readonly renderer: THREE.WebGLRenderer;
  private readonly scene: THREE.Scene;
  private readonly camera: THREE.PerspectiveCamera;
  private readonly controls: OrbitControls;
  private mesh: THREE.Mesh | null = null;
  private disposed = false;

  constructor(canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.renderer.setPixelRatio(window.devicePixelRatio);
    this.scene = new THREE.Scene();
    this.scene.background = new THREE.Color(0x14161a);
    this.camera = new THREE.PerspectiveCamera(
      45,
      canvas.clientWidth / Math.max(1, canvas.clientHeight),
      0.01,
      100,
    );
    this.camera.position.set(1.8, 1.4, 2.2);
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.enableDamping = true;

    const key = new THREE.DirectionalLight(0xffffff, 2.2);
    key.position.set(3, 4, 5);
    const fill = new THREE.DirectionalLight(0x8899bb, 0.8);
    fill.position.set(-4, -2, -3);
    this.scene.add(key, fill, new THREE.AmbientLight(0xffffff, 0.25));

    const animate = () => {
      if (this.disposed) return;
      requestAnimationFrame(animate);
      this.resize();
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  private resize() {
    const canvas = this.renderer.domElement;
    const w = canvas.clientWidth;
    const h = canvas.clientHeight;
    if (canvas.width !== w || canvas.height !== h) {
      this.renderer.setSize(w, h, false);
      this.camera.aspect = w / Math.max(1, h);
      this.camera.updateProjectionMatrix();
    }
  }

  setMesh(parsed: ParsedMesh) {
    this.clear();
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(parsed.positions, 3));
    geometry.setIndex(new THREE.BufferAttribute(parsed.indices, 1));
    geometry.computeVertexNormals();
    const material = new THREE.MeshStandardMaterial({
      color: 0x7aa2cc,
      flatShading: true,
    });
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);
  }

  clear() {
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
      (this.mesh.material as THREE.Material).dispose();
      this.mesh = null;
    }
  }

  dispose() {
    this.disposed = true;
    this.clear();
    this.controls.dispose();
    this.renderer.dispose();
  }
}
