// Recap & comparison views rendered straight from report JSON: progress
// curves, per-exit bars, a congestion heatmap, and side-by-side run deltas.

import { ApiClient, ComparisonReport, RecapReport } from "./api";
import { escapeHtml } from "./panels";

export class RecapView {
  lastReport: RecapReport | null = null;
  lastComparison: ComparisonReport | null = null;

  constructor(private root: HTMLElement, private api: ApiClient) {}

  async show(simId: string, compareWith?: string): Promise<void> {
    const report = await this.api.recap(simId);
    this.lastReport = report;
    this.lastComparison = compareWith ? await this.api.compare(simId, compareWith) : null;

    const causes = Object.entries(report.fatalities_by_cause)
      .map(([c, n]) => `<li>${escapeHtml(c)}: ${n}</li>`)
      .join("");
    const exits = Object.entries(report.per_exit_total)
      .map(([e, n]) => {
        const total = Math.max(1, report.progress_curve[report.progress_curve.length - 1] ?? 1);
        const pct = Math.round((n / total) * 100);
        return `<li><span class="bar" style="width:${pct}%"></span>${escapeHtml(e)}: ${n}</li>`;
      })
      .join("");
    const highlights = report.highlights
      .slice(0, 8)
      .map((h) => `<li>r${h["round"]} #${h["agent"]}: ${escapeHtml(String(h["rationale"] ?? ""))}</li>`)
      .join("");
    const interventions = report.intervention_timeline
      .map((iv) => `<li>r${iv["round"]}: ${escapeHtml(String(iv["action"]))}</li>`)
      .join("");

    this.root.innerHTML = `
      <h3>Recap: ${escapeHtml(simId)}</h3>
      <div class="recap-grid">
        <div>
          <h4>Evacuation progress</h4>
          <canvas id="recap-progress" width="320" height="140"></canvas>
          <h4>Per-exit throughput</h4>
          <ul class="exit-bars">${exits}</ul>
        </div>
        <div>
          <h4>Congestion (max density)</h4>
          <canvas id="recap-congestion" width="320" height="220"></canvas>
          <h4>Fatalities</h4>
          <ul>${causes || "<li class='hint'>none</li>"}</ul>
        </div>
        <div>
          <h4>Decision highlights</h4>
          <ul class="highlights">${highlights || "<li class='hint'>none</li>"}</ul>
          <h4>Interventions</h4>
          <ul>${interventions || "<li class='hint'>none</li>"}</ul>
          <div id="recap-compare"></div>
        </div>
      </div>
    `;
    this.drawProgress(report);
    this.drawCongestion(report);
    if (this.lastComparison) this.renderComparison(this.lastComparison);
  }

  private drawProgress(report: RecapReport): void {
    const canvas = this.root.querySelector("#recap-progress") as HTMLCanvasElement | null;
    const ctx = canvas?.getContext("2d");
    if (!canvas || !ctx) return;
    const curve = report.progress_curve;
    const maxY = Math.max(1, ...curve);
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#3dbd7d";
    ctx.beginPath();
    curve.forEach((v, i) => {
      const x = (i / Math.max(1, curve.length - 1)) * (canvas.width - 10) + 5;
      const y = canvas.height - 5 - (v / maxY) * (canvas.height - 10);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }

  private drawCongestion(report: RecapReport): void {
    const canvas = this.root.querySelector("#recap-congestion") as HTMLCanvasElement | null;
    const ctx = canvas?.getContext("2d");
    if (!canvas || !ctx) return;
    const grid = report.congestion_grid;
    if (!grid.length) return;
    const gh = grid.length;
    const gw = grid[0].length;
    const cw = canvas.width / gw;
    const ch = canvas.height / gh;
    let peak = 0.001;
    for (const row of grid) for (const v of row) peak = Math.max(peak, v);
    for (let iy = 0; iy < gh; iy++) {
      for (let ix = 0; ix < gw; ix++) {
        const v = grid[iy][ix] / peak;
        if (v <= 0.01) continue;
        ctx.fillStyle = `rgba(200, 40, 30, ${Math.min(0.9, v)})`;
        // Venue y-up: row 0 renders at the bottom.
        ctx.fillRect(ix * cw, canvas.height - (iy + 1) * ch, cw, ch);
      }
    }
  }

  private renderComparison(cmp: ComparisonReport): void {
    const host = this.root.querySelector("#recap-compare") as HTMLElement | null;
    if (!host) return;
    const exits = Object.entries(cmp.per_exit_delta)
      .map(([e, d]) => `<li>${escapeHtml(e)}: ${d >= 0 ? "+" : ""}${d}</li>`)
      .join("");
    const causes = Object.entries(cmp.casualty_delta)
      .map(([c, d]) => `<li>${escapeHtml(c)}: ${d >= 0 ? "+" : ""}${d}</li>`)
      .join("");
    host.innerHTML = `
      <h4>vs ${escapeHtml(cmp.run_b)}</h4>
      <p>final exited delta: ${cmp.final_exited_delta >= 0 ? "+" : ""}${cmp.final_exited_delta}</p>
      <ul>${exits}</ul>
      <ul>${causes || "<li class='hint'>no casualty differences</li>"}</ul>
    `;
  }
}
