// Live canvas: agents, threat contours, coordinator zones, exits, peer
// cursors, annotations. Direct manipulation emits intervention commands and
// changes nothing locally; the render updates only when STATE_UPDATEs land.

import type { InterventionCommand, StateUpdatePayload } from "./protocol";
import { STATE_COLORS, THREAT_COLORS } from "./protocol";
import { AppStore, interpolationT, lerpPositions } from "./store";

export type Tool =
  | "inspect"
  | "coordinator"
  | "police"
  | "fire"
  | "bomb"
  | "shooter"
  | "weather"
  | "hazmat"
  | "block_exit"
  | "annotate";

const THREAT_TOOLS: Record<string, string> = {
  fire: "FIRE",
  bomb: "BOMB",
  shooter: "SHOOTER",
  weather: "WEATHER",
  hazmat: "HAZMAT",
};

export interface SceneAgent {
  index: number;
  x: number;
  y: number;
  state: string;
  color: string;
}

export interface SceneThreat {
  id: string;
  kind: string;
  x: number;
  y: number;
  visibleRadius: number;
  color: string;
}

export interface Scene {
  round: number;
  width: number;
  height: number;
  agents: SceneAgent[];
  threats: SceneThreat[];
  exits: { id: string; name: string; x: number; y: number; open: boolean; accessible: boolean }[];
  coordinators: { id: string; x: number; y: number }[];
  police: { id: string; x: number; y: number; alive: boolean }[];
}

const STATE_NAMES = ["DISCUSSING", "MOVING", "WAITING", "EXITED", "WOUNDED", "DEAD"];

// Visible radii are a display contract: fire radius comes from the heat
// release the server reports in kind_state; the rest are static per kind.
export function threatVisibleRadius(threat: {
  kind: string;
  severity: string;
  kind_state: Record<string, unknown> | null;
}): number {
  if (threat.kind === "FIRE" && threat.kind_state) {
    const alpha = Number(threat.kind_state["alpha"] ?? 0);
    const elapsed = Number(threat.kind_state["elapsed"] ?? 0);
    const q = Math.min(1055, alpha * elapsed * elapsed);
    return Math.sqrt((0.35 * q) / (4 * Math.PI * 2.5));
  }
  if (threat.kind === "BOMB") {
    return { LOW: 21, MEDIUM: 34, HIGH: 46 }[threat.severity] ?? 21;
  }
  if (threat.kind === "SHOOTER") return 50;
  if (threat.kind === "WEATHER") return 30.5;
  if (threat.kind === "HAZMAT") {
    return Number(threat.kind_state?.["idlh_radius"] ?? 30);
  }
  return 5;
}

export function buildScene(
  update: StateUpdatePayload,
  positions: [number, number][],
  venueSize: { width: number; height: number },
): Scene {
  const agents: SceneAgent[] = [];
  for (let i = 0; i < positions.length; i++) {
    const state = STATE_NAMES[update.states[i]] ?? "MOVING";
    if (state === "EXITED") continue; // exited agents leave the canvas
    agents.push({
      index: i,
      x: positions[i][0] / 100,
      y: positions[i][1] / 100,
      state,
      color: STATE_COLORS[state] ?? "#888",
    });
  }
  const threats: SceneThreat[] = update.environment.threats
    .filter((t) => t.active)
    .map((t) => ({
      id: t.id,
      kind: t.kind,
      x: t.position[0],
      y: t.position[1],
      visibleRadius: threatVisibleRadius(t),
      color: THREAT_COLORS[t.kind] ?? "#444",
    }));
  return {
    round: update.round,
    width: venueSize.width,
    height: venueSize.height,
    agents,
    threats,
    exits: update.environment.exits.map((e) => ({
      id: e.id,
      name: e.name,
      x: e.position[0],
      y: e.position[1],
      open: e.open,
      accessible: e.accessible,
    })),
    coordinators: update.environment.coordinators.map((c) => ({
      id: c.id,
      x: c.position[0],
      y: c.position[1],
    })),
    police: update.environment.police.map((p) => ({
      id: p.id,
      x: p.position[0],
      y: p.position[1],
      alive: p.alive,
    })),
  };
}

export interface CanvasCallbacks {
  sendCommands(commands: InterventionCommand[]): void;
  sendCursor(x: number, y: number): void;
  sendAnnotation(points: [number, number][]): void;
  selectAgent(index: number | null): void;
}

export class CanvasView {
  tool: Tool = "inspect";
  venue = { width: 220, height: 180 };
  lastScene: Scene | null = null;
  coordinatorZoneRadius = 3.7;
  private dragCoordinator: string | null = null;
  private stroke: [number, number][] | null = null;
  private ctx: CanvasRenderingContext2D | null;

  constructor(
    private canvas: HTMLCanvasElement,
    private store: AppStore,
    private callbacks: CanvasCallbacks,
  ) {
    this.ctx = canvas.getContext("2d");
    canvas.addEventListener("mousedown", (e) => this.onDown(this.toVenue(e)));
    canvas.addEventListener("mousemove", (e) => this.onMove(this.toVenue(e)));
    canvas.addEventListener("mouseup", (e) => this.onUp(this.toVenue(e)));
  }

  setVenueSize(width: number, height: number): void {
    this.venue = { width, height };
  }

  private scale(): number {
    return Math.min(this.canvas.width / this.venue.width, this.canvas.height / this.venue.height);
  }

  toVenue(e: { offsetX: number; offsetY: number }): [number, number] {
    const s = this.scale();
    // Canvas y grows downward; venue y grows upward.
    return [e.offsetX / s, (this.canvas.height - e.offsetY) / s];
  }

  private toScreen(x: number, y: number): [number, number] {
    const s = this.scale();
    return [x * s, this.canvas.height - y * s];
  }

  // -- direct manipulation -----------------------------------------------

  private onDown([x, y]: [number, number]): void {
    const scene = this.lastScene;
    if (this.tool === "annotate") {
      this.stroke = [[x, y]];
      return;
    }
    if (this.tool === "coordinator" && scene) {
      const near = scene.coordinators.find((c) => Math.hypot(c.x - x, c.y - y) < 2.0);
      if (near) {
        this.dragCoordinator = near.id; // drag = remove + place on release
        return;
      }
    }
  }

  private onMove(p: [number, number]): void {
    if (this.stroke) {
      this.stroke.push(p);
      return;
    }
    this.callbacks.sendCursor(p[0], p[1]);
  }

  private onUp([x, y]: [number, number]): void {
    if (this.stroke) {
      if (this.stroke.length > 1) this.callbacks.sendAnnotation(this.stroke);
      this.stroke = null;
      return;
    }
    const scene = this.lastScene;
    switch (this.tool) {
      case "inspect": {
        if (!scene) return;
        let best: { index: number; d: number } | null = null;
        for (const a of scene.agents) {
          const d = Math.hypot(a.x - x, a.y - y);
          if (d < 1.5 && (best === null || d < best.d)) best = { index: a.index, d };
        }
        this.callbacks.selectAgent(best ? best.index : null);
        return;
      }
      case "coordinator": {
        const commands: InterventionCommand[] = [];
        if (this.dragCoordinator) {
          commands.push({ action: "REMOVE_COORDINATOR", data: { id: this.dragCoordinator } });
          this.dragCoordinator = null;
        }
        commands.push({ action: "PLACE_COORDINATOR", data: { position: [x, y] } });
        this.callbacks.sendCommands(commands);
        return;
      }
      case "police": {
        this.callbacks.sendCommands([
          { action: "PLACE_POLICE", data: { position: [x, y], count: 1 } },
        ]);
        return;
      }
      case "block_exit": {
        if (!scene) return;
        const exit = scene.exits.find((e) => Math.hypot(e.x - x, e.y - y) < 4.0);
        if (exit) {
          this.callbacks.sendCommands([
            { action: "BLOCK_EXIT", data: { exit_id: exit.id, reopen: !exit.open } },
          ]);
        }
        return;
      }
      default: {
        const kind = THREAT_TOOLS[this.tool];
        if (kind) {
          this.callbacks.sendCommands([
            { action: "ADD_THREAT", data: { kind, severity: "MEDIUM", position: [x, y] } },
          ]);
        }
      }
    }
  }

  // -- rendering ------------------------------------------------------------

  refresh(now: number = Date.now()): Scene | null {
    const view = this.store.activeView();
    if (!view?.latest) {
      this.lastScene = null;
      return null;
    }
    const t = interpolationT(view, now);
    const positions = lerpPositions(
      view.previous ? view.previous.positions : null,
      view.latest.positions,
      t,
    );
    this.lastScene = buildScene(view.latest, positions, this.venue);
    this.draw(this.lastScene);
    return this.lastScene;
  }

  private draw(scene: Scene): void {
    const ctx = this.ctx;
    if (!ctx) return; // headless test environment
    const s = this.scale();
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.fillStyle = "#f6f4ee";
    ctx.fillRect(0, 0, scene.width * s, this.canvas.height);

    for (const c of scene.coordinators) {
      const [cx, cy] = this.toScreen(c.x, c.y);
      ctx.beginPath();
      ctx.fillStyle = "rgba(61, 140, 64, 0.12)";
      ctx.arc(cx, cy, this.coordinatorZoneRadius * s, 0, Math.PI * 2);
      ctx.fill();
      ctx.fillStyle = "#2c6e31";
      ctx.fillRect(cx - 3, cy - 3, 6, 6);
    }

    for (const t of scene.threats) {
      const [tx, ty] = this.toScreen(t.x, t.y);
      ctx.beginPath();
      ctx.strokeStyle = t.color;
      ctx.fillStyle = t.color + "22";
      ctx.arc(tx, ty, Math.max(2, t.visibleRadius * s), 0, Math.PI * 2);
      ctx.fill();
      ctx.stroke();
      // Awareness ring at 1.5x the visible contour.
      ctx.beginPath();
      ctx.setLineDash([4, 4]);
      ctx.arc(tx, ty, Math.max(2, t.visibleRadius * 1.5 * s), 0, Math.PI * 2);
      ctx.stroke();
      ctx.setLineDash([]);
    }

    for (const a of scene.agents) {
      const [ax, ay] = this.toScreen(a.x, a.y);
      ctx.fillStyle = a.color;
      ctx.fillRect(ax - 1.5, ay - 1.5, 3, 3);
    }

    for (const e of scene.exits) {
      const [ex, ey] = this.toScreen(e.x, e.y);
      ctx.fillStyle = e.open ? "#1e7f3c" : "#b03030";
      ctx.beginPath();
      ctx.arc(ex, ey, 5, 0, Math.PI * 2);
      ctx.fill();
      ctx.fillStyle = "#222";
      ctx.font = "11px sans-serif";
      ctx.fillText(e.name + (e.accessible ? " ♿" : ""), ex + 7, ey + 3);
    }

    for (const p of scene.police) {
      if (!p.alive) continue;
      const [px, py] = this.toScreen(p.x, p.y);
      ctx.fillStyle = "#1d3f8f";
      ctx.beginPath();
      ctx.arc(px, py, 3, 0, Math.PI * 2);
      ctx.fill();
    }

    for (const ann of this.store.annotations) {
      ctx.strokeStyle = "#c78c2a";
      ctx.beginPath();
      ann.points.forEach(([x, y], i) => {
        const [sx, sy] = this.toScreen(x, y);
        if (i === 0) ctx.moveTo(sx, sy);
        else ctx.lineTo(sx, sy);
      });
      ctx.stroke();
      if (ann.kind === "pin" && ann.text) {
        const [sx, sy] = this.toScreen(ann.points[0][0], ann.points[0][1]);
        ctx.fillStyle = "#c78c2a";
        ctx.fillText(ann.text, sx + 4, sy - 4);
      }
    }

    const cutoff = Date.now() - 5000;
    for (const cursor of this.store.cursors.values()) {
      if (cursor.at < cutoff) continue;
      const [cx, cy] = this.toScreen(cursor.x, cursor.y);
      ctx.fillStyle = "#7a4fbf";
      ctx.beginPath();
      ctx.moveTo(cx, cy);
      ctx.lineTo(cx + 8, cy + 12);
      ctx.lineTo(cx + 3, cy + 11);
      ctx.closePath();
      ctx.fill();
      ctx.fillText(cursor.name, cx + 10, cy + 18);
    }
  }
}
