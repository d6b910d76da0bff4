// Inspection panel: persona, state, rationale, group chat, and interviews.
// Everything shown comes from the agent-detail endpoint or interview replies.

import { ApiClient } from "./api";
import { AppStore } from "./store";

export class InspectionPanel {
  private currentAgent: number | null = null;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
  ) {
    this.root.innerHTML = `<h3>Inspection</h3><p class="hint">Click an agent on the canvas.</p>`;
  }

  async show(simId: string, agentId: number): Promise<void> {
    this.currentAgent = agentId;
    const detail = await this.api.agent(simId, agentId);
    if (this.currentAgent !== agentId) return; // selection moved on
    const traits = detail.persona.traits.join(", ");
    const chat = detail.group_chat
      .map((m) => `<li><b>#${m.agent}</b> ${escapeHtml(m.text)}</li>`)
      .join("");
    this.root.innerHTML = `
      <h3>${escapeHtml(detail.persona.display_name)} <small>#${detail.id}</small></h3>
      <dl>
        <dt>Role</dt><dd>${detail.persona.role}${detail.persona.accessibility_need ? " (accessibility need)" : ""}</dd>
        <dt>Traits</dt><dd>${escapeHtml(traits)}</dd>
        <dt>State</dt><dd class="state-${detail.state}">${detail.state}</dd>
        <dt>Mobility</dt><dd>${detail.mobility}</dd>
        <dt>Destination</dt><dd>${detail.target ? escapeHtml(detail.target.name) : "none"}</dd>
        <dt>Rationale</dt><dd class="rationale">${escapeHtml(detail.rationale ?? "no decision yet")}</dd>
      </dl>
      <h4>Group ${detail.group_id} chat</h4>
      <ul class="chat">${chat || "<li class='hint'>no messages</li>"}</ul>
      <h4>Interview</h4>
      <form id="interview-form">
        <input type="text" id="interview-q" placeholder="Ask this agent anything..." />
        <button type="submit">Ask</button>
      </form>
      <p id="interview-a" class="rationale"></p>
    `;
    const form = this.root.querySelector("#interview-form") as HTMLFormElement;
    form.addEventListener("submit", async (e) => {
      e.preventDefault();
      const input = this.root.querySelector("#interview-q") as HTMLInputElement;
      const answerEl = this.root.querySelector("#interview-a") as HTMLElement;
      if (!input.value.trim()) return;
      answerEl.textContent = "...";
      try {
        const { answer } = await this.api.interview(simId, agentId, input.value);
        answerEl.textContent = answer;
      } catch (err) {
        answerEl.textContent = `interview failed: ${err}`;
      }
    });
  }

  clear(): void {
    this.currentAgent = null;
    this.root.innerHTML = `<h3>Inspection</h3><p class="hint">Click an agent on the canvas.</p>`;
  }
}

export class MetricsPanel {
  constructor(private root: HTMLElement, private store: AppStore) {}

  refresh(): void {
    const view = this.store.activeView();
    if (!view?.latest) {
      this.root.innerHTML = `<p class="hint">no run selected</p>`;
      return;
    }
    const p = view.latest;
    const states = Object.entries(p.state_counts)
      .map(([k, v]) => `<span class="state-${k}">${k}: ${v}</span>`)
      .join(" ");
    const warning = view.hashWarning
      ? `<p class="warning">⚠ ${view.hashWarning}</p>`
      : "";
    const progress = this.store.activeSim
      ? this.store.progress.get(this.store.activeSim)
      : null;
    this.root.innerHTML = `
      <h3>Round ${p.round} <small>${p.status}${progress ? " · " + progress : ""}</small></h3>
      <p>exited ${p.counts.exited} · in venue ${p.counts.alive} · dead ${p.counts.dead}</p>
      <p class="states">${states}</p>
      <p class="announcement">\u{1F4E2} ${escapeHtml(p.announcement)}</p>
      <p class="hash" title="state hash">${p.hash.slice(0, 16)}…</p>
      ${warning}
    `;
  }
}

export function escapeHtml(s: string): string {
  return s.replace(/[&<>"']/g, (c) => ({
    "&": "&amp;",
    "<": "&lt;",
    ">": "&gt;",
    '"': "&quot;",
    "'": "&#39;",
  })[c]!);
}
