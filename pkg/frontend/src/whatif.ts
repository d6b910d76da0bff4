// What-If command box: free text goes to the server for grounded translation;
// the translated commands are shown for confirmation before anything applies.

import { ApiClient } from "./api";
import type { InterventionCommand } from "./protocol";
import { escapeHtml } from "./panels";

export class WhatIfBox {
  pending: InterventionCommand[] = [];

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private getSim: () => string | null,
    private applyCommands: (commands: InterventionCommand[]) => void,
  ) {
    this.root.innerHTML = `
      <h3>What-If</h3>
      <form id="whatif-form">
        <input type="text" id="whatif-input"
               placeholder="e.g. place a coordinator near Gate A" />
        <button type="submit">Translate</button>
      </form>
      <div id="whatif-result"></div>
    `;
    const form = root.querySelector("#whatif-form") as HTMLFormElement;
    form.addEventListener("submit", (e) => {
      e.preventDefault();
      void this.translate();
    });
  }

  async translate(): Promise<void> {
    const simId = this.getSim();
    const input = this.root.querySelector("#whatif-input") as HTMLInputElement;
    const result = this.root.querySelector("#whatif-result") as HTMLElement;
    if (!simId || !input.value.trim()) return;
    result.innerHTML = `<p class="hint">translating…</p>`;
    const { commands, explanation } = await this.api.translate(simId, input.value);
    this.pending = commands;
    if (!commands.length) {
      result.innerHTML = `<p class="warning">${escapeHtml(explanation)}</p>`;
      return;
    }
    const list = commands
      .map((c) => `<li><code>${escapeHtml(c.action)}</code> ${escapeHtml(JSON.stringify(c.data))}</li>`)
      .join("");
    result.innerHTML = `
      <p>${escapeHtml(explanation)}</p>
      <ul>${list}</ul>
      <button id="whatif-apply">Apply</button>
      <button id="whatif-cancel">Cancel</button>
    `;
    (result.querySelector("#whatif-apply") as HTMLButtonElement).addEventListener("click", () => {
      this.applyCommands(this.pending);
      this.pending = [];
      result.innerHTML = `<p class="hint">applied.</p>`;
    });
    (result.querySelector("#whatif-cancel") as HTMLButtonElement).addEventListener("click", () => {
      this.pending = [];
      result.innerHTML = "";
    });
  }
}
