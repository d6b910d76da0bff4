// Thin request/response client. Injectable fetch keeps tests network-free.

import type { InterventionCommand, RunInfo } from "./protocol";

export interface AgentDetail {
  id: number;
  persona: {
    display_name: string;
    role: string;
    traits: string[];
    accessibility_need: boolean;
  };
  state: string;
  position: [number, number];
  mobility: string;
  target: { id: string; name: string; kind: string } | null;
  rationale: string | null;
  group_id: number;
  group_chat: { agent: number; text: string }[];
  history: { round: number; destination: string | null; rationale: string }[];
}

export interface RecapReport {
  simulation_id: string;
  rounds: number[];
  progress_curve: number[];
  per_exit_throughput: Record<string, number[]>;
  per_exit_total: Record<string, number>;
  congestion_grid: number[][];
  congestion_cell_size: number;
  fatalities_by_cause: Record<string, number>;
  trajectory_samples: Record<string, [number, number][]>;
  highlights: Record<string, unknown>[];
  intervention_timeline: Record<string, unknown>[];
  final_counts: Record<string, number>;
}

export interface ComparisonReport {
  run_a: string;
  run_b: string;
  progress_delta: number[];
  final_exited_delta: number;
  per_exit_delta: Record<string, number>;
  casualty_delta: Record<string, number>;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private projectId: string,
    private fetcher: FetchLike = (...args) => fetch(...args),
    private base: string = "",
  ) {}

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetcher(`${this.base}/api/projects/${this.projectId}${path}`);
    if (!resp.ok) throw new Error(`GET ${path}: ${resp.status}`);
    return (await resp.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetcher(`${this.base}/api/projects/${this.projectId}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw new Error(`POST ${path}: ${resp.status}`);
    return (await resp.json()) as T;
  }

  runs(): Promise<{ runs: RunInfo[] }> {
    return this.get("/runs");
  }

  rounds(simId: string): Promise<{ rounds: number[] }> {
    return this.get(`/runs/${simId}/rounds`);
  }

  snapshot(simId: string, round: number): Promise<any> {
    return this.get(`/runs/${simId}/rounds/${round}`);
  }

  recap(simId: string): Promise<RecapReport> {
    return this.get(`/runs/${simId}/recap`);
  }

  archive(simId: string): Promise<{ scenario: { venue: { width: number; height: number } } }> {
    return this.get(`/runs/${simId}/archive`);
  }

  compare(a: string, b: string): Promise<ComparisonReport> {
    return this.get(`/compare?a=${encodeURIComponent(a)}&b=${encodeURIComponent(b)}`);
  }

  agent(simId: string, agentId: number): Promise<AgentDetail> {
    return this.get(`/runs/${simId}/agents/${agentId}`);
  }

  interview(simId: string, agentId: number, question: string): Promise<{ answer: string }> {
    return this.post(`/runs/${simId}/interview`, { agent_id: agentId, question });
  }

  translate(
    simId: string,
    utterance: string,
  ): Promise<{ commands: InterventionCommand[]; explanation: string }> {
    return this.post(`/runs/${simId}/translate`, { utterance });
  }
}
