import { describe, expect, it, vi } from "vitest";

import { Connection } from "../src/connection";
import { AppStore, interpolationT, lerpPositions } from "../src/store";
import { FakeServer, makeStateUpdate } from "./harness";

describe("store interpolation", () => {
  it("never extrapolates beyond the latest round", () => {
    const store = new AppStore();
    store.apply({ type: "STATE_UPDATE", sim_id: "r", payload: makeStateUpdate(1, [[0, 0]]) }, 1000);
    store.apply({ type: "STATE_UPDATE", sim_id: "r", payload: makeStateUpdate(2, [[10, 0]]) }, 2000);
    const view = store.view("r");
    expect(interpolationT(view, 2000)).toBe(0);
    expect(interpolationT(view, 2000 + 1250)).toBeCloseTo(0.5);
    expect(interpolationT(view, 2000 + 60_000)).toBe(1); // clamped, not extrapolated
  });

  it("lerps positions midway", () => {
    const prev: [number, number][] = [[0, 0]];
    const next: [number, number][] = [[100, 50]];
    expect(lerpPositions(prev, next, 0.5)).toEqual([[50, 25]]);
    expect(lerpPositions(prev, next, 1)).toBe(next);
    expect(lerpPositions(null, next, 0.2)).toBe(next);
  });

  it("tracks ordered state updates and run rounds", () => {
    const store = new AppStore();
    store.apply({ type: "JOIN", payload: { runs: [{ id: "r", latest_round: 0 }], presence: [] } });
    store.apply({ type: "STATE_UPDATE", sim_id: "r", payload: makeStateUpdate(5, [[1, 1]]) });
    expect(store.runs[0].latest_round).toBe(5);
    expect(store.view("r").latest?.update_seq).toBe(6);
  });

  it("records errors from the server", () => {
    const store = new AppStore();
    store.apply({ type: "ERROR", payload: { error: "NotFoundError", detail: "ghost" } });
    expect(store.errors[0]).toContain("NotFoundError");
  });
});

describe("connection", () => {
  it("sends heartbeats on the configured interval", () => {
    vi.useFakeTimers();
    const server = new FakeServer();
    const conn = new Connection({
      projectId: "p",
      displayName: "n",
      socketFactory: server.factory,
      heartbeatMs: 1000,
    });
    conn.connect();
    server.socket.open();
    vi.advanceTimersByTime(3500);
    expect(server.socket.sentOfType("HEARTBEAT").length).toBe(3);
    conn.close();
    vi.advanceTimersByTime(5000);
    expect(server.socket.sentOfType("HEARTBEAT").length).toBe(3);
    vi.useRealTimers();
  });

  it("reconnects with its token after a drop", () => {
    vi.useFakeTimers();
    const server = new FakeServer();
    const conn = new Connection({
      projectId: "p",
      displayName: "n",
      socketFactory: server.factory,
      reconnectMs: 100,
    });
    conn.connect();
    server.socket.open();
    server.socket.push({ type: "JOIN", payload: { session_id: "s", token: "tok-9", runs: [], presence: [] } });
    const first = server.socket;
    first.onclose?.();
    vi.advanceTimersByTime(150);
    expect(server.sockets.length).toBe(2);
    expect(server.socket.url).toContain("token=tok-9");
    expect(server.socket).not.toBe(first);
    conn.close();
    vi.useRealTimers();
  });
});
