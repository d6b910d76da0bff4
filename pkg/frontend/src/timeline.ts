// Timeline: scrub stored rounds via the persistence API, branch from any
// prior moment. Scrubbed frames are view-only; FORK goes through the server.

import { ApiClient } from "./api";
import { AppStore } from "./store";

export interface TimelineCallbacks {
  fork(simId: string, atRound: number): void;
  showHistorical(snapshot: any | null): void;
}

export class Timeline {
  rounds: number[] = [];
  scrubRound: number | null = null;

  private slider: HTMLInputElement;
  private label: HTMLElement;
  private forkButton: HTMLButtonElement;
  private liveButton: HTMLButtonElement;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private store: AppStore,
    private callbacks: TimelineCallbacks,
  ) {
    this.root.innerHTML = `
      <input type="range" id="timeline-slider" min="0" max="0" value="0" />
      <span id="timeline-label">round -</span>
      <button id="timeline-branch" disabled>Branch here</button>
      <button id="timeline-live" disabled>Back to live</button>
    `;
    this.slider = root.querySelector("#timeline-slider") as HTMLInputElement;
    this.label = root.querySelector("#timeline-label") as HTMLElement;
    this.forkButton = root.querySelector("#timeline-branch") as HTMLButtonElement;
    this.liveButton = root.querySelector("#timeline-live") as HTMLButtonElement;

    this.slider.addEventListener("input", () => this.onScrub(Number(this.slider.value)));
    this.forkButton.addEventListener("click", () => {
      if (this.store.activeSim && this.scrubRound !== null) {
        this.callbacks.fork(this.store.activeSim, this.scrubRound);
        this.backToLive();
      }
    });
    this.liveButton.addEventListener("click", () => this.backToLive());
  }

  async refreshRounds(): Promise<void> {
    if (!this.store.activeSim) return;
    const { rounds } = await this.api.rounds(this.store.activeSim);
    this.rounds = rounds;
    this.slider.max = String(rounds.length ? rounds[rounds.length - 1] : 0);
    const view = this.store.activeView();
    if (this.scrubRound === null && view?.latest) {
      this.slider.value = String(view.latest.round);
      this.label.textContent = `round ${view.latest.round} (live)`;
    }
  }

  async onScrub(round: number): Promise<void> {
    if (!this.store.activeSim) return;
    this.scrubRound = round;
    this.label.textContent = `round ${round} (history)`;
    this.forkButton.disabled = false;
    this.liveButton.disabled = false;
    try {
      const snapshot = await this.api.snapshot(this.store.activeSim, round);
      if (this.scrubRound === round) this.callbacks.showHistorical(snapshot);
    } catch {
      // Round not stored yet; ignore.
    }
  }

  backToLive(): void {
    this.scrubRound = null;
    this.forkButton.disabled = true;
    this.liveButton.disabled = true;
    const view = this.store.activeView();
    if (view?.latest) {
      this.slider.value = String(view.latest.round);
      this.label.textContent = `round ${view.latest.round} (live)`;
    }
    this.callbacks.showHistorical(null);
  }
}
