// App state, mutated exclusively by server messages and API responses.
// Zero authority: any value shown on screen must trace back to one of those.

import type {
  RunInfo,
  StateUpdatePayload,
  WireMessage,
} from "./protocol";

export interface PeerPresence {
  session_id: string;
  name: string;
}

export interface CursorState {
  sessionId: string;
  name: string;
  x: number; // venue metres
  y: number;
  at: number; // wall-clock ms
}

export interface Annotation {
  kind: "stroke" | "pin";
  points: [number, number][]; // venue metres
  text?: string;
  author: string;
}

export interface RunView {
  // Previous and latest updates drive cosmetic interpolation; the UI never
  // extrapolates past `latest`.
  previous: StateUpdatePayload | null;
  latest: StateUpdatePayload | null;
  receivedAt: number;
  hashWarning: string | null;
}

export type StoreListener = (store: AppStore) => void;

export class AppStore {
  runs: RunInfo[] = [];
  presence: PeerPresence[] = [];
  cursors = new Map<string, CursorState>();
  annotations: Annotation[] = [];
  runViews = new Map<string, RunView>();
  activeSim: string | null = null;
  selectedAgent: number | null = null;
  paused = new Map<string, boolean>();
  progress = new Map<string, string>();
  errors: string[] = [];

  private listeners: StoreListener[] = [];

  subscribe(listener: StoreListener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    for (const l of this.listeners) l(this);
  }

  view(simId: string): RunView {
    let view = this.runViews.get(simId);
    if (!view) {
      view = { previous: null, latest: null, receivedAt: 0, hashWarning: null };
      this.runViews.set(simId, view);
    }
    return view;
  }

  activeView(): RunView | null {
    return this.activeSim ? this.view(this.activeSim) : null;
  }

  setActiveSim(simId: string | null): void {
    this.activeSim = simId;
    this.selectedAgent = null;
    this.emit();
  }

  selectAgent(agentId: number | null): void {
    this.selectedAgent = agentId;
    this.emit();
  }

  // The one entry point for everything the server tells us.
  apply(msg: WireMessage, now: number = Date.now()): void {
    switch (msg.type) {
      case "JOIN": {
        this.runs = msg.payload.runs ?? [];
        this.presence = msg.payload.presence ?? [];
        break;
      }
      case "PRESENCE": {
        if (msg.payload?.presence) this.presence = msg.payload.presence;
        if (msg.payload?.lastHash && msg.sender) {
          this.checkPeerHash(msg.payload.lastHash as Record<string, string>);
        }
        break;
      }
      case "CURSOR": {
        if (msg.sender && msg.payload) {
          const name =
            this.presence.find((p) => p.session_id === msg.sender)?.name ?? "peer";
          this.cursors.set(msg.sender, {
            sessionId: msg.sender,
            name,
            x: msg.payload.x,
            y: msg.payload.y,
            at: now,
          });
        }
        break;
      }
      case "ANNOTATION": {
        if (msg.payload?.annotation) {
          this.annotations.push(msg.payload.annotation as Annotation);
        }
        if (msg.payload?.clear) this.annotations = [];
        break;
      }
      case "STATE_UPDATE": {
        const simId = msg.sim_id!;
        const view = this.view(simId);
        view.previous = view.latest;
        view.latest = msg.payload as StateUpdatePayload;
        view.receivedAt = now;
        this.progress.delete(simId);
        this.refreshRunRound(simId, view.latest.round);
        break;
      }
      case "ROUND_PROGRESS": {
        if (msg.sim_id) this.progress.set(msg.sim_id, msg.payload?.stage ?? "working");
        break;
      }
      case "PAUSE": {
        if (msg.sim_id) this.paused.set(msg.sim_id, !!msg.payload?.paused);
        break;
      }
      case "INIT":
      case "FORK": {
        if (msg.payload?.runs) this.runs = msg.payload.runs;
        break;
      }
      case "ERROR": {
        this.errors.push(`${msg.payload?.error}: ${msg.payload?.detail ?? ""}`);
        break;
      }
      default:
        break;
    }
    this.emit();
  }

  // Hash agreement: warn when a peer's last hash for a run differs from ours.
  private checkPeerHash(peerHashes: Record<string, string>): void {
    for (const [simId, hash] of Object.entries(peerHashes)) {
      const view = this.runViews.get(simId);
      if (!view?.latest) continue;
      if (view.latest.hash !== hash) {
        view.hashWarning = `state hash diverges from a peer on run ${simId}`;
      } else {
        view.hashWarning = null;
      }
    }
  }

  lastHashes(): Record<string, string> {
    const out: Record<string, string> = {};
    for (const [simId, view] of this.runViews) {
      if (view.latest) out[simId] = view.latest.hash;
    }
    return out;
  }

  private refreshRunRound(simId: string, round: number): void {
    const run = this.runs.find((r) => r.id === simId);
    if (run) run.latest_round = round;
  }
}

// Interpolation factor for cosmetic playback between the previous and latest
// updates (wall-scaled to the round length; clamped, never extrapolating).
export function interpolationT(
  view: RunView,
  now: number,
  roundSeconds = 2.5,
  playbackSpeed = 1,
): number {
  if (!view.previous || !view.latest) return 1;
  const elapsed = (now - view.receivedAt) / 1000;
  const t = (elapsed * playbackSpeed) / roundSeconds;
  return Math.max(0, Math.min(1, t));
}

export function lerpPositions(
  prev: [number, number][] | null,
  next: [number, number][],
  t: number,
): [number, number][] {
  if (!prev || prev.length !== next.length || t >= 1) return next;
  const out: [number, number][] = new Array(next.length);
  for (let i = 0; i < next.length; i++) {
    out[i] = [
      prev[i][0] + (next[i][0] - prev[i][0]) * t,
      prev[i][1] + (next[i][1] - prev[i][1]) * t,
    ];
  }
  return out;
}
