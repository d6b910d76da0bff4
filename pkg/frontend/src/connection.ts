// Single persistent connection with heartbeat and token reconnect. Outbound
// messages round-trip through the server; nothing is applied optimistically.

import type { WireMessage } from "./protocol";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ConnectionOptions {
  projectId: string;
  displayName: string;
  socketFactory?: SocketFactory;
  heartbeatMs?: number;
  reconnectMs?: number;
  base?: string;
}

type Listener = (msg: WireMessage) => void;

export class Connection {
  private socket: SocketLike | null = null;
  private listeners: Listener[] = [];
  private heartbeatTimer: ReturnType<typeof setInterval> | null = null;
  private closed = false;
  token: string | null = null;
  sessionId: string | null = null;

  constructor(private opts: ConnectionOptions) {}

  connect(): void {
    const { projectId, displayName } = this.opts;
    const factory: SocketFactory =
      this.opts.socketFactory ??
      ((url) => new WebSocket(url) as unknown as SocketLike);
    const base =
      this.opts.base ??
      `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}`;
    const tokenPart = this.token ? `&token=${this.token}` : "";
    this.socket = factory(
      `${base}/ws/${projectId}?name=${encodeURIComponent(displayName)}${tokenPart}`,
    );
    this.socket.onmessage = (ev) => {
      const msg = JSON.parse(ev.data) as WireMessage;
      if (msg.type === "JOIN" && msg.payload) {
        this.token = msg.payload.token ?? this.token;
        this.sessionId = msg.payload.session_id ?? this.sessionId;
      }
      for (const listener of this.listeners) listener(msg);
    };
    this.socket.onopen = () => this.startHeartbeat();
    this.socket.onclose = () => {
      this.stopHeartbeat();
      if (!this.closed) {
        setTimeout(() => this.connect(), this.opts.reconnectMs ?? 1500);
      }
    };
  }

  onMessage(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  send(msg: WireMessage): void {
    this.socket?.send(JSON.stringify(msg));
  }

  close(): void {
    this.closed = true;
    this.stopHeartbeat();
    this.socket?.close();
  }

  private startHeartbeat(): void {
    this.stopHeartbeat();
    this.heartbeatTimer = setInterval(() => {
      this.send({ type: "HEARTBEAT" });
    }, this.opts.heartbeatMs ?? 15000);
  }

  private stopHeartbeat(): void {
    if (this.heartbeatTimer !== null) {
      clearInterval(this.heartbeatTimer);
      this.heartbeatTimer = null;
    }
  }
}
