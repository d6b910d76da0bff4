// Wire protocol types for the sync service. The UI is a pure client of these
// messages plus the request/response API: it never computes simulation state.

export type MessageType =
  | "JOIN"
  | "LEAVE"
  | "PRESENCE"
  | "CURSOR"
  | "ANNOTATION"
  | "INIT"
  | "STEP"
  | "AUTOPLAY"
  | "PAUSE"
  | "INTERVENE"
  | "FORK"
  | "SUBSCRIBE"
  | "STATE_UPDATE"
  | "ROUND_PROGRESS"
  | "ERROR"
  | "HEARTBEAT";

export interface WireMessage {
  type: MessageType;
  payload?: any;
  sim_id?: string;
  sender?: string;
  srv_seq?: number;
}

export interface ExitInfo {
  id: string;
  name: string;
  position: [number, number];
  width: number;
  accessible: boolean;
  open: boolean;
}

export interface ThreatInfo {
  id: string;
  kind: string;
  severity: string;
  position: [number, number];
  active: boolean;
  spawn_round: number;
  kind_state: Record<string, unknown> | null;
}

export interface CoordinatorInfo {
  id: string;
  position: [number, number];
  directive: string | null;
}

export interface EnvironmentInfo {
  announcement: string;
  exits: ExitInfo[];
  obstacles: { id: string; points: [number, number][] }[];
  coordinators: CoordinatorInfo[];
  police: { id: string; position: [number, number]; alive: boolean }[];
  threats: ThreatInfo[];
}

export interface StateUpdatePayload {
  round: number;
  status: string;
  update_seq: number;
  hash: string;
  counts: { exited: number; dead: number; alive: number };
  state_counts: Record<string, number>;
  positions: [number, number][]; // centimetres (quantized), divide by 100
  states: number[];
  environment: EnvironmentInfo;
  announcement: string;
  detail?: Record<string, unknown>;
}

export interface RunInfo {
  id: string;
  parent_id: string | null;
  fork_round: number | null;
  label: string;
  seed: number;
  latest_round: number | null;
}

export interface InterventionCommand {
  action: string;
  data: Record<string, unknown>;
  issued_by?: string;
  issued_round?: number;
}

// Agent state enum mirrors the engine's wire values.
export const AGENT_STATES = ["DISCUSSING", "MOVING", "WAITING", "EXITED", "WOUNDED", "DEAD"] as const;

export const STATE_COLORS: Record<string, string> = {
  DISCUSSING: "#e8b93c",
  MOVING: "#4f9dde",
  WAITING: "#9b7fd4",
  EXITED: "#3dbd7d",
  WOUNDED: "#e0703c",
  DEAD: "#8a2f2f",
};

export const THREAT_COLORS: Record<string, string> = {
  FIRE: "#e04a2f",
  BOMB: "#70443c",
  SHOOTER: "#1d1d24",
  WEATHER: "#4a69bd",
  HAZMAT: "#7ca82b",
};
