// Wire protocol spoken with the supervision bridge: one JSON object per
// websocket message, sequence numbers strictly increasing per direction.

export type MessageKind =
  | "HELLO"
  | "STATE"
  | "TAKEOVER"
  | "HUMAN_ACTION"
  | "RELEASE"
  | "LABEL"
  | "EPISODE_END"
  | "CONFIG"
  | "ERROR";

export const MESSAGE_KINDS: MessageKind[] = [
  "HELLO", "STATE", "TAKEOVER", "HUMAN_ACTION", "RELEASE", "LABEL",
  "EPISODE_END", "CONFIG", "ERROR",
];

export interface SessionMessage {
  kind: MessageKind;
  seq: number;
  payload: Record<string, unknown>;
}

export interface CartpoleState {
  x: number;
  x_dot: number;
  theta: number;
  theta_dot: number;
}

export interface NavsimState {
  x: number;
  y: number;
  heading: number;
  goal: number[];
  obstacles: number[][];
  beams: number[];
}

export interface StatePayload {
  episode: number;
  step_index: number;
  f_demo: 0 | 1;
  action: number[] | null;
  state: CartpoleState | NavsimState;
  paused: boolean;
  control: "agent" | "human" | "gate";
}

export interface ConfigPayload {
  env: "cartpole" | "navsim";
  control_hz: number;
  action_low: number[];
  action_high: number[];
  obs_dim: number;
}

export interface EpisodeEndPayload {
  terminal_kind: string;
  metrics: {
    episode: number;
    steps: number;
    supervised_steps: number;
    episode_return: number;
    success: boolean;
  } | null;
}

export function encodeMessage(kind: MessageKind, seq: number,
                              payload: Record<string, unknown> = {}): string {
  return JSON.stringify({ kind, seq, payload });
}

export function decodeMessage(raw: string): SessionMessage {
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    throw new Error("message is not valid JSON");
  }
  if (typeof parsed !== "object" || parsed === null) {
    throw new Error("message must be an object");
  }
  const msg = parsed as Record<string, unknown>;
  if (typeof msg.kind !== "string" || !MESSAGE_KINDS.includes(msg.kind as MessageKind)) {
    throw new Error(`unknown kind ${String(msg.kind)}`);
  }
  if (typeof msg.seq !== "number" || !Number.isInteger(msg.seq)) {
    throw new Error("seq must be an integer");
  }
  if (typeof msg.payload !== "object" || msg.payload === null) {
    throw new Error("payload must be an object");
  }
  return { kind: msg.kind as MessageKind, seq: msg.seq,
           payload: msg.payload as Record<string, unknown> };
}

export function isCartpole(state: CartpoleState | NavsimState): state is CartpoleState {
  return (state as CartpoleState).theta !== undefined;
}

export function clipToBox(action: number[], low: number[], high: number[]): number[] {
  return action.map((a, i) => Math.min(Math.max(a, low[i]), high[i]));
}
