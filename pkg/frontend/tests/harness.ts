// In-process stand-ins for the sync service: a fake socket pair that speaks
// the wire protocol and a fetch stub for the request/response API. The
// scripted-session tests drive the real app against these.

import type { SocketLike } from "../src/connection";
import type {
  EnvironmentInfo,
  StateUpdatePayload,
  WireMessage,
} from "../src/protocol";

export class FakeSocket implements SocketLike {
  sent: WireMessage[] = [];
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: string }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  closed = false;

  constructor(public url: string) {}

  send(data: string): void {
    this.sent.push(JSON.parse(data));
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  // -- server side --
  open(): void {
    this.onopen?.();
  }

  push(msg: WireMessage): void {
    this.onmessage?.({ data: JSON.stringify(msg) });
  }

  sentOfType(type: string): WireMessage[] {
    return this.sent.filter((m) => m.type === type);
  }
}

export class FakeServer {
  sockets: FakeSocket[] = [];

  factory = (url: string): SocketLike => {
    const socket = new FakeSocket(url);
    this.sockets.push(socket);
    return socket;
  };

  get socket(): FakeSocket {
    return this.sockets[this.sockets.length - 1];
  }

  handshake(runs: unknown[] = [], presence: unknown[] = [{ session_id: "s1", name: "tester" }]): void {
    this.socket.open();
    this.socket.push({
      type: "JOIN",
      payload: { session_id: "s1", token: "tok-1", runs, presence },
    });
  }
}

export function makeEnvironment(overrides: Partial<EnvironmentInfo> = {}): EnvironmentInfo {
  return {
    announcement: "Proceed to Gate A.",
    exits: [
      { id: "gate_a", name: "Gate A", position: [110, 0.25], width: 6, accessible: true, open: true },
      { id: "gate_b", name: "Gate B", position: [219.75, 90], width: 5, accessible: false, open: true },
    ],
    obstacles: [],
    coordinators: [],
    police: [],
    threats: [],
    ...overrides,
  };
}

export function makeStateUpdate(
  round: number,
  positionsMetres: [number, number][],
  overrides: Partial<StateUpdatePayload> = {},
): StateUpdatePayload {
  return {
    round,
    status: "RUNNING",
    update_seq: round + 1,
    hash: `hash-${round}`,
    counts: { exited: 0, dead: 0, alive: positionsMetres.length },
    state_counts: { MOVING: positionsMetres.length },
    positions: positionsMetres.map(([x, y]) => [Math.round(x * 100), Math.round(y * 100)]),
    states: positionsMetres.map(() => 1),
    environment: makeEnvironment(),
    announcement: "Proceed to Gate A.",
    ...overrides,
  };
}

export type Routes = Record<string, unknown | ((url: string) => unknown)>;

export function makeFetch(routes: Routes) {
  const calls: string[] = [];
  const fetcher = async (url: string, _init?: RequestInit): Promise<Response> => {
    calls.push(url);
    for (const [prefix, value] of Object.entries(routes)) {
      if (url.startsWith(prefix)) {
        const body = typeof value === "function" ? (value as (u: string) => unknown)(url) : value;
        return {
          ok: true,
          status: 200,
          json: async () => body,
        } as Response;
      }
    }
    return { ok: false, status: 404, json: async () => ({}) } as Response;
  };
  return { fetcher, calls };
}

export function mouse(canvas: HTMLCanvasElement, type: string, offsetX: number, offsetY: number): void {
  const ev = new MouseEvent(type, { bubbles: true });
  Object.defineProperty(ev, "offsetX", { value: offsetX });
  Object.defineProperty(ev, "offsetY", { value: offsetY });
  canvas.dispatchEvent(ev);
}
