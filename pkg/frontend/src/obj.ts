/** Minimal OBJ wire-format parser for the meshes the API serves.
 *
 * The server emits only `v x y z` and `f a b c` lines (triangles, 1-based
 * indices), but negative (relative) indices and `a/b/c` face tuples are
 * accepted since they cost nothing. Anything structurally wrong throws,
 * so the caller can show an error banner while keeping the session alive.
 */

export interface ParsedMesh {
  positions: Float32Array; // xyz triples
  indices: Uint32Array; // vertex indices, triangle triples
  vertexCount: number;
  triangleCount: number;
}

export function isEmptyMesh(mesh: ParsedMesh): boolean {
  return mesh.triangleCount === 0;
}

function faceIndex(token: string, vertexCount: number, line: number): number {
  const head = token.split("/", 1)[0];
  const idx = Number(head);
  if (!Number.isInteger(idx) || idx === 0) {
    throw new Error(`malformed face index "${token}" on line ${line}`);
  }
  const resolved = idx > 0 ? idx - 1 : vertexCount + idx;
  if (resolved < 0 || resolved >= vertexCount) {
    throw new Error(`face index ${idx} out of range on line ${line}`);
  }
  return resolved;
}

export function parseObj(text: string): ParsedMesh {
  const positions: number[] = [];
  const indices: number[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "" || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    if (parts[0] === "v") {
      if (parts.length < 4) throw new Error(`malformed vertex on line ${i + 1}`);
      for (let c = 1; c <= 3; c++) {
        const value = Number(parts[c]);
        if (!Number.isFinite(value)) {
          throw new Error(`non-finite vertex coordinate on line ${i + 1}`);
        }
        positions.push(value);
      }
    } else if (parts[0] === "f") {
      if (parts.length !== 4) {
        throw new Error(`only triangular faces supported (line ${i + 1})`);
      }
      const nVerts = positions.length / 3;
      for (let c = 1; c <= 3; c++) {
        indices.push(faceIndex(parts[c], nVerts, i + 1));
      }
    }
    // other directives (vn, vt, o, g, s, usemtl ...) are ignored
  }
  return {
    positions: new Float32Array(positions),
    indices: new Uint32Array(indices),
    vertexCount: positions.length / 3,
    triangleCount: indices.length / 3,
  };
}
