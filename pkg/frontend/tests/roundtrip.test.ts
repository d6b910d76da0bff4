// The scripted session the release criterion asks for: join, place a
// coordinator via the canvas, observe the STATE_UPDATE-driven re-render,
// fork from the timeline, open the recap — with every mutation observed via
// server messages only (zero-authority).

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { createApp, type App } from "../src/main";
import { FakeServer, makeFetch, makeStateUpdate, mouse } from "./harness";

const RUN = {
  id: "run1",
  parent_id: null,
  fork_round: null,
  label: "drill",
  seed: 7,
  latest_round: 0,
};

function buildRoutes(extra: Record<string, unknown> = {}) {
  return makeFetch({
    "/api/projects/demo/runs/run1/archive": {
      simulation: { id: "run1" },
      scenario: { venue: { width: 220, height: 180 } },
      interventions: [],
      rounds_recorded: [0, 1, 2, 3],
    },
    "/api/projects/demo/runs/run1/rounds/2": {
      round: 2,
      status: "PAUSED",
      positions: [[1000, 1000]],
      states: [1],
      environment: makeStateUpdate(2, [[10, 10]]).environment,
    },
    "/api/projects/demo/runs/run1/rounds": { rounds: [0, 1, 2, 3] },
    "/api/projects/demo/runs/run1/recap": {
      simulation_id: "run1",
      rounds: [0, 1, 2, 3],
      progress_curve: [0, 2, 5, 9],
      per_exit_throughput: { gate_a: [0, 2, 5, 9] },
      per_exit_total: { gate_a: 9, gate_b: 0 },
      congestion_grid: [[0.2, 0.8], [0.0, 1.6]],
      congestion_cell_size: 2,
      fatalities_by_cause: { fire: 1 },
      trajectory_samples: {},
      highlights: [{ round: 1, agent: 3, rationale: "Gate A is 30 m away." }],
      intervention_timeline: [{ round: 2, action: "PLACE_COORDINATOR" }],
      final_counts: { EXITED: 9 },
    },
    "/api/projects/demo/runs/run1/agents/0": {
      id: 0,
      persona: { display_name: "Sam Reyes", role: "attendee", traits: ["calm"], accessibility_need: false },
      state: "MOVING",
      position: [12, 14],
      mobility: "standard",
      target: { id: "gate_a", name: "Gate A", kind: "exit" },
      rationale: "Gate A is closest.",
      group_id: 0,
      group_chat: [],
      history: [],
    },
    ...extra,
  });
}

describe("scripted session round-trip", () => {
  let app: App;
  let server: FakeServer;

  beforeEach(async () => {
    document.body.innerHTML = `<div id="root"></div>`;
    server = new FakeServer();
    const { fetcher } = buildRoutes();
    app = createApp(document.getElementById("root")!, {
      projectId: "demo",
      displayName: "tester",
      socketFactory: server.factory,
      fetcher,
    });
    server.handshake([RUN]);
    await Promise.resolve();
  });

  afterEach(() => {
    app.dispose();
  });

  it("joins and lists runs from the server", () => {
    expect(app.store.runs.map((r) => r.id)).toEqual(["run1"]);
    expect(app.connection.token).toBe("tok-1");
    const runButtons = document.querySelectorAll("#run-list button");
    expect(runButtons.length).toBe(1);
  });

  it("subscribes, renders only server state, and re-renders on STATE_UPDATE", async () => {
    await app.setActiveRun("run1");
    expect(server.socket.sentOfType("SUBSCRIBE")[0]?.sim_id).toBe("run1");

    // Nothing rendered until the server speaks.
    expect(app.canvasView.refresh(Date.now())).toBeNull();

    server.socket.push({
      type: "STATE_UPDATE",
      sim_id: "run1",
      payload: makeStateUpdate(1, [[50, 60], [70, 80]]),
    });
    const scene = app.canvasView.refresh(Date.now() + 10_000)!;
    expect(scene.round).toBe(1);
    expect(scene.agents.map((a) => [a.x, a.y])).toEqual([
      [50, 60],
      [70, 80],
    ]);
  });

  it("places a coordinator via the canvas: the command round-trips, the render does not change until the server broadcasts", async () => {
    await app.setActiveRun("run1");
    server.socket.push({
      type: "STATE_UPDATE",
      sim_id: "run1",
      payload: makeStateUpdate(1, [[50, 60]]),
    });
    app.refresh(Date.now() + 10_000);

    // Pick the coordinator tool and click the canvas.
    const toolButton = [...document.querySelectorAll("#toolbar button")].find(
      (b) => (b as HTMLButtonElement).dataset.tool === "coordinator",
    ) as HTMLButtonElement;
    toolButton.click();
    const canvas = document.getElementById("sim-canvas") as HTMLCanvasElement;
    // Canvas is 880x720 for venue 220x180 -> scale 4 px/m. Click (100 m, 90 m).
    mouse(canvas, "mousedown", 400, 360);
    mouse(canvas, "mouseup", 400, 360);

    const intervenes = server.socket.sentOfType("INTERVENE");
    expect(intervenes.length).toBe(1);
    const command = intervenes[0].payload.command;
    expect(command.action).toBe("PLACE_COORDINATOR");
    expect(command.data.position[0]).toBeCloseTo(100, 0);
    expect(command.data.position[1]).toBeCloseTo(90, 0);

    // Zero authority: no coordinator appears before the server's broadcast.
    let scene = app.canvasView.refresh(Date.now() + 10_000)!;
    expect(scene.coordinators).toEqual([]);

    const env = makeStateUpdate(1, [[50, 60]]).environment;
    env.coordinators = [{ id: "coord_0", position: [100, 90], directive: null }];
    server.socket.push({
      type: "STATE_UPDATE",
      sim_id: "run1",
      payload: makeStateUpdate(2, [[51, 60]], { environment: env }),
    });
    scene = app.canvasView.refresh(Date.now() + 20_000)!;
    expect(scene.coordinators).toEqual([{ id: "coord_0", x: 100, y: 90 }]);
  });

  it("forks from the timeline and shows the child run when the server answers", async () => {
    await app.setActiveRun("run1");
    server.socket.push({
      type: "STATE_UPDATE",
      sim_id: "run1",
      payload: makeStateUpdate(3, [[50, 60]]),
    });
    await Promise.resolve();

    // Scrub to round 2, then branch.
    await app.timeline.onScrub(2);
    const branch = document.getElementById("timeline-branch") as HTMLButtonElement;
    expect(branch.disabled).toBe(false);
    branch.click();

    const forks = server.socket.sentOfType("FORK");
    expect(forks).toEqual([
      expect.objectContaining({ sim_id: "run1", payload: { at_round: 2 } }),
    ]);

    // Server confirms: run list now carries the child.
    server.socket.push({
      type: "FORK",
      sim_id: "run1",
      payload: {
        child_id: "child1",
        at_round: 2,
        runs: [RUN, { ...RUN, id: "child1", parent_id: "run1", fork_round: 2, label: "drill" }],
      },
    });
    expect(app.store.runs.map((r) => r.id)).toEqual(["run1", "child1"]);
    const labels = [...document.querySelectorAll("#run-list button")].map((b) => b.textContent);
    expect(labels.some((l) => l!.includes("fork@2"))).toBe(true);
  });

  it("opens the recap rendered from report JSON", async () => {
    await app.setActiveRun("run1");
    await app.recap.show("run1");
    const body = document.getElementById("recap-body")!;
    expect(body.textContent).toContain("Recap: run1");
    expect(body.textContent).toContain("gate_a: 9");
    expect(body.textContent).toContain("fire: 1");
    expect(app.recap.lastReport?.progress_curve).toEqual([0, 2, 5, 9]);
  });

  it("inspects an agent and interviews through the API only", async () => {
    const { fetcher, calls } = buildRoutes({
      "/api/projects/demo/runs/run1/interview": { answer: "I went for Gate A." },
    });
    app.dispose();
    document.body.innerHTML = `<div id="root"></div>`;
    server = new FakeServer();
    app = createApp(document.getElementById("root")!, {
      projectId: "demo",
      displayName: "tester",
      socketFactory: server.factory,
      fetcher,
    });
    server.handshake([RUN]);
    await app.setActiveRun("run1");
    server.socket.push({
      type: "STATE_UPDATE",
      sim_id: "run1",
      payload: makeStateUpdate(1, [[12, 14]]),
    });
    app.refresh(Date.now() + 10_000);

    const canvas = document.getElementById("sim-canvas") as HTMLCanvasElement;
    // Inspect tool is the default; click on the agent at (12 m, 14 m).
    mouse(canvas, "mousedown", 48, 720 - 56);
    mouse(canvas, "mouseup", 48, 720 - 56);
    await new Promise((r) => setTimeout(r, 0));

    expect(app.store.selectedAgent).toBe(0);
    const panel = document.getElementById("inspection")!;
    expect(panel.textContent).toContain("Sam Reyes");
    expect(panel.textContent).toContain("Gate A is closest.");

    const input = panel.querySelector("#interview-q") as HTMLInputElement;
    input.value = "Why that gate?";
    (panel.querySelector("#interview-form") as HTMLFormElement).dispatchEvent(
      new Event("submit", { bubbles: true, cancelable: true }),
    );
    await new Promise((r) => setTimeout(r, 0));
    expect(panel.querySelector("#interview-a")!.textContent).toContain("I went for Gate A.");
    expect(calls.some((u) => u.includes("/interview"))).toBe(true);
  });

  it("surfaces a hash warning when a peer reports a different state hash", async () => {
    await app.setActiveRun("run1");
    server.socket.push({
      type: "STATE_UPDATE",
      sim_id: "run1",
      payload: makeStateUpdate(1, [[50, 60]]),
    });
    server.socket.push({
      type: "PRESENCE",
      sender: "peer-2",
      payload: { lastHash: { run1: "divergent-hash" } },
    });
    expect(app.store.view("run1").hashWarning).toContain("diverges");
    // Matching hash clears it.
    server.socket.push({
      type: "PRESENCE",
      sender: "peer-2",
      payload: { lastHash: { run1: "hash-1" } },
    });
    expect(app.store.view("run1").hashWarning).toBeNull();
  });
});
