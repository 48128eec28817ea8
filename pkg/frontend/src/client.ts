// Websocket wrapper: assigns strictly increasing outbound sequence numbers,
// surfaces connection status, and reconnects with a backoff.

import { MessageKind, SessionMessage, decodeMessage, encodeMessage } from "./protocol.js";
import { Connection } from "./viewmodel.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export class SessionClient {
  private socket: SocketLike | null = null;
  private seq = 0;
  private closed = false;
  private retryMs = 500;

  constructor(
    private url: string,
    private onMessage: (msg: SessionMessage) => void,
    private onStatus: (status: Connection) => void,
    private factory: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
  ) {}

  connect(): void {
    this.onStatus("connecting");
    const sock = this.factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.retryMs = 500;
      this.onStatus("connected");
      this.send("HELLO");
    };
    sock.onmessage = (ev) => {
      try {
        this.onMessage(decodeMessage(ev.data));
      } catch {
        // ignore malformed frames; the server never sends them
      }
    };
    sock.onclose = () => {
      this.socket = null;
      this.onStatus("disconnected");
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 5000);
      }
    };
    sock.onerror = () => sock.onclose && sock.onclose();
  }

  send(kind: MessageKind, payload: Record<string, unknown> = {}): boolean {
    if (this.socket === null) {
      return false;
    }
    this.seq += 1;
    this.socket.send(encodeMessage(kind, this.seq, payload));
    return true;
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
