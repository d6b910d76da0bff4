// App wiring. Everything on screen derives from server messages and API
// responses; user gestures only ever emit wire messages.

import { ApiClient, FetchLike } from "./api";
import { CanvasView, Tool } from "./canvas";
import { Connection, SocketFactory } from "./connection";
import { InspectionPanel, MetricsPanel } from "./panels";
import type { InterventionCommand, StateUpdatePayload } from "./protocol";
import { RecapView } from "./recap";
import { AppStore } from "./store";
import { Timeline } from "./timeline";
import { WhatIfBox } from "./whatif";

export interface AppOptions {
  projectId: string;
  displayName: string;
  socketFactory?: SocketFactory;
  fetcher?: FetchLike;
  wsBase?: string;
}

export interface App {
  store: AppStore;
  connection: Connection;
  canvasView: CanvasView;
  timeline: Timeline;
  recap: RecapView;
  whatif: WhatIfBox;
  inspection: InspectionPanel;
  metrics: MetricsPanel;
  setActiveRun(simId: string): Promise<void>;
  sendCommands(commands: InterventionCommand[]): void;
  refresh(now?: number): void;
  dispose(): void;
}

const TOOLS: { id: Tool; label: string }[] = [
  { id: "inspect", label: "Inspect" },
  { id: "coordinator", label: "Coordinator" },
  { id: "police", label: "Police" },
  { id: "fire", label: "Fire" },
  { id: "bomb", label: "Bomb" },
  { id: "shooter", label: "Shooter" },
  { id: "weather", label: "Storm" },
  { id: "hazmat", label: "Hazmat" },
  { id: "block_exit", label: "Block/open exit" },
  { id: "annotate", label: "Annotate" },
];

export function createApp(root: HTMLElement, opts: AppOptions): App {
  root.innerHTML = `
    <header>
      <span id="project-name"></span>
      <nav id="run-list"></nav>
      <div id="controls">
        <button id="btn-step">Step</button>
        <button id="btn-play">Play</button>
        <button id="btn-pause">Pause</button>
        <input id="announcement-input" type="text" placeholder="Edit announcement…" />
        <button id="btn-announce">Announce</button>
        <button id="btn-recap">Recap</button>
      </div>
      <div id="presence"></div>
    </header>
    <main>
      <aside id="toolbar"></aside>
      <section id="canvas-wrap"><canvas id="sim-canvas" width="880" height="720"></canvas></section>
      <aside id="side">
        <div id="metrics"></div>
        <div id="inspection"></div>
        <div id="whatif"></div>
      </aside>
    </main>
    <footer id="timeline"></footer>
    <dialog id="recap-dialog"><div id="recap-body"></div><button id="recap-close">Close</button></dialog>
    <div id="errors"></div>
  `;

  const store = new AppStore();
  const api = new ApiClient(opts.projectId, opts.fetcher);
  const connection = new Connection({
    projectId: opts.projectId,
    displayName: opts.displayName,
    socketFactory: opts.socketFactory,
    base: opts.wsBase,
  });

  const sendCommands = (commands: InterventionCommand[]) => {
    if (!store.activeSim) return;
    for (const command of commands) {
      connection.send({
        type: "INTERVENE",
        sim_id: store.activeSim,
        payload: { command },
      });
    }
  };

  const canvas = root.querySelector("#sim-canvas") as HTMLCanvasElement;
  const inspection = new InspectionPanel(root.querySelector("#inspection")!, api);
  const canvasView = new CanvasView(canvas, store, {
    sendCommands,
    sendCursor: (x, y) => connection.send({ type: "CURSOR", payload: { x, y } }),
    sendAnnotation: (points) =>
      connection.send({
        type: "ANNOTATION",
        payload: { annotation: { kind: "stroke", points, author: opts.displayName } },
      }),
    selectAgent: (index) => {
      store.selectAgent(index);
      if (index !== null && store.activeSim) {
        void inspection.show(store.activeSim, index);
      } else {
        inspection.clear();
      }
    },
  });
  const metrics = new MetricsPanel(root.querySelector("#metrics")!, store);
  const recap = new RecapView(root.querySelector("#recap-body")!, api);
  const whatif = new WhatIfBox(
    root.querySelector("#whatif")!,
    api,
    () => store.activeSim,
    sendCommands,
  );

  let historical: StateUpdatePayload | null = null;
  const timeline = new Timeline(root.querySelector("#timeline")!, api, store, {
    fork: (simId, atRound) =>
      connection.send({ type: "FORK", sim_id: simId, payload: { at_round: atRound } }),
    showHistorical: (snapshot) => {
      historical = snapshot
        ? ({
            round: snapshot.round,
            status: snapshot.status,
            update_seq: -1,
            hash: "",
            counts: { exited: 0, dead: 0, alive: 0 },
            state_counts: {},
            positions: snapshot.positions,
            states: snapshot.states,
            environment: snapshot.environment,
            announcement: snapshot.environment?.announcement ?? "",
          } as StateUpdatePayload)
        : null;
      refresh();
    },
  });

  // -- toolbar -----------------------------------------------------------

  const toolbar = root.querySelector("#toolbar")!;
  for (const tool of TOOLS) {
    const btn = document.createElement("button");
    btn.textContent = tool.label;
    btn.dataset.tool = tool.id;
    btn.addEventListener("click", () => {
      canvasView.tool = tool.id;
      toolbar.querySelectorAll("button").forEach((b) => b.classList.remove("active"));
      btn.classList.add("active");
    });
    toolbar.appendChild(btn);
  }

  (root.querySelector("#btn-step") as HTMLButtonElement).addEventListener("click", () => {
    if (store.activeSim) connection.send({ type: "STEP", sim_id: store.activeSim });
  });
  (root.querySelector("#btn-play") as HTMLButtonElement).addEventListener("click", () => {
    if (store.activeSim)
      connection.send({ type: "AUTOPLAY", sim_id: store.activeSim, payload: { playing: true } });
  });
  (root.querySelector("#btn-pause") as HTMLButtonElement).addEventListener("click", () => {
    if (store.activeSim) connection.send({ type: "PAUSE", sim_id: store.activeSim });
  });
  (root.querySelector("#btn-announce") as HTMLButtonElement).addEventListener("click", () => {
    const input = root.querySelector("#announcement-input") as HTMLInputElement;
    if (input.value.trim()) {
      sendCommands([{ action: "EDIT_ANNOUNCEMENT", data: { text: input.value.trim() } }]);
      input.value = "";
    }
  });
  (root.querySelector("#btn-recap") as HTMLButtonElement).addEventListener("click", () => {
    const dialog = root.querySelector("#recap-dialog") as HTMLDialogElement;
    if (store.activeSim) {
      void recap.show(store.activeSim).then(() => dialog.showModal?.() ?? dialog.setAttribute("open", ""));
    }
  });
  (root.querySelector("#recap-close") as HTMLButtonElement).addEventListener("click", () => {
    const dialog = root.querySelector("#recap-dialog") as HTMLDialogElement;
    dialog.close?.() ?? dialog.removeAttribute("open");
  });

  (root.querySelector("#project-name") as HTMLElement).textContent = opts.projectId;

  // -- server messages ------------------------------------------------------

  const offMessage = connection.onMessage((msg) => {
    store.apply(msg);
    if (msg.type === "STATE_UPDATE" && msg.sim_id === store.activeSim) {
      // Hash agreement: let peers compare against our latest state hash.
      connection.send({ type: "PRESENCE", payload: { lastHash: store.lastHashes() } });
      void timeline.refreshRounds();
    }
    renderChrome();
    refresh();
  });

  async function setActiveRun(simId: string): Promise<void> {
    store.setActiveSim(simId);
    connection.send({ type: "SUBSCRIBE", sim_id: simId });
    try {
      const archive = await api.archive(simId);
      const venue = archive.scenario?.venue;
      if (venue) canvasView.setVenueSize(venue.width, venue.height);
    } catch {
      /* keep the default venue size until the archive is readable */
    }
    void timeline.refreshRounds();
    renderChrome();
  }

  function renderChrome(): void {
    const runList = root.querySelector("#run-list")!;
    runList.innerHTML = "";
    for (const run of store.runs) {
      const btn = document.createElement("button");
      btn.textContent = `${run.label || run.id}${
        run.fork_round !== null ? ` (fork@${run.fork_round})` : ""
      } · r${run.latest_round ?? "-"}`;
      btn.dataset.simId = run.id;
      if (run.id === store.activeSim) btn.classList.add("active");
      btn.addEventListener("click", () => void setActiveRun(run.id));
      runList.appendChild(btn);
    }
    const presence = root.querySelector("#presence")!;
    presence.innerHTML = store.presence
      .map((p) => `<span class="avatar" title="${p.name}">${p.name.slice(0, 2)}</span>`)
      .join("");
    const errors = root.querySelector("#errors")!;
    errors.innerHTML = store.errors
      .slice(-3)
      .map((e) => `<p class="warning">${e}</p>`)
      .join("");
    metrics.refresh();
  }

  function refresh(now: number = Date.now()): void {
    if (historical) {
      const view = store.activeView();
      const saved = view ? { ...view } : null;
      if (view) {
        view.previous = null;
        view.latest = historical;
      }
      canvasView.refresh(now);
      if (view && saved) {
        view.previous = saved.previous;
        view.latest = saved.latest;
        view.receivedAt = saved.receivedAt;
      }
      return;
    }
    canvasView.refresh(now);
  }

  let raf = 0;
  const loop = () => {
    refresh();
    raf = requestAnimationFrame(loop);
  };
  if (typeof requestAnimationFrame === "function") raf = requestAnimationFrame(loop);

  connection.connect();

  return {
    store,
    connection,
    canvasView,
    timeline,
    recap,
    whatif,
    inspection,
    metrics,
    setActiveRun,
    sendCommands,
    refresh,
    dispose: () => {
      offMessage();
      if (raf) cancelAnimationFrame(raf);
      connection.close();
    },
  };
}

// Browser entry point (tests import createApp directly instead).
if (typeof document !== "undefined" && document.getElementById("app")) {
  const params = new URLSearchParams(location.search);
  createApp(document.getElementById("app")!, {
    projectId: params.get("project") ?? "default",
    displayName: params.get("name") ?? `planner-${Math.floor(Math.random() * 1000)}`,
  });
}
