/** Style-triangle widget: cursor position to barycentric weights. */

export interface Vec2 {
  x: number;
  y: number;
}

export class TriangleWidgetError extends Error {}

function cross(o: Vec2, a: Vec2, b: Vec2): number {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

function closestOnSegment(p: Vec2, a: Vec2, b: Vec2): Vec2 {
  const abx = b.x - a.x;
  const aby = b.y - a.y;
  const len2 = abx * abx + aby * aby;
  const t = len2 === 0 ? 0 : Math.max(0, Math.min(1, ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2));
  return { x: a.x + t * abx, y: a.y + t * aby };
}

export class TriangleWidget {
  readonly styles: [string, string, string];
  readonly vertices: [Vec2, Vec2, Vec2];

  constructor(styles: [string, string, string], vertices: [Vec2, Vec2, Vec2]) {
    if (new Set(styles).size !== 3) {
      throw new TriangleWidgetError("triangle needs three distinct styles");
    }
    if (Math.abs(cross(vertices[0], vertices[1], vertices[2])) < 1e-12) {
      throw new TriangleWidgetError("degenerate triangle");
    }
    this.styles = styles;
    this.vertices = vertices;
  }

  /** Clamp an arbitrary cursor to the triangle (nearest boundary point). */
  clamp(cursor: Vec2): Vec2 {
    const lambda = this.rawBarycentric(cursor);
    if (lambda.every((v) => v >= 0)) return cursor;
    const [a, b, c] = this.vertices;
    let best: Vec2 = a;
    let bestDist = Infinity;
    for (const [p, q] of [[a, b], [b, c], [c, a]] as const) {
      const candidate = closestOnSegment(cursor, p, q);
      const d = (candidate.x - cursor.x) ** 2 + (candidate.y - cursor.y) ** 2;
      if (d < bestDist) {
        bestDist = d;
        best = candidate;
      }
    }
    return best;
  }

  /** Signed-area barycentric coordinates, not clamped. */
  rawBarycentric(p: Vec2): [number, number, number] {
    const [a, b, c] = this.vertices;
    const total = cross(a, b, c);
    const l0 = cross(p, b, c) / total;
    const l1 = cross(a, p, c) / total;
    const l2 = cross(a, b, p) / total;
    return [l0, l1, l2];
  }

  /** Valid simplex weights for any cursor: clamp, then renormalize. */
  barycentric(cursor: Vec2): [number, number, number] {
    const lambda = this.rawBarycentric(this.clamp(cursor));
    const clipped = lambda.map((v) => Math.max(0, v));
    const sum = clipped[0] + clipped[1] + clipped[2];
    return [clipped[0] / sum, clipped[1] / sum, clipped[2] / sum];
  }

  selection(cursor: Vec2): { mode: "triangle"; ids: [string, string, string]; lambda: [number, number, number] } {
    return { mode: "triangle", ids: this.styles, lambda: this.barycentric(cursor) };
  }
}
