// Rendering state derived from the message stream. The control badge
// mirrors the latest STATE's f_demo plus whether our own takeover is
// outstanding; charts hold per-episode supervised steps with an n=10
// trailing moving average (leading windows are partial).

import {
  ConfigPayload,
  EpisodeEndPayload,
  SessionMessage,
  StatePayload,
} from "./protocol.js";

export type ControlBadge = "AGENT" | "HUMAN" | "GATE";
export type Connection = "connecting" | "connected" | "disconnected";

export interface ViewModel {
  config: ConfigPayload | null;
  lastState: StatePayload | null;
  control: ControlBadge;
  takeoverActive: boolean;
  labelMode: boolean;
  episode: number;
  stepIndex: number;
  paused: boolean;
  seqGap: boolean;
  lastSeq: number;
  supervisedPerEpisode: number[];
  smoothedSupervised: number[];
  episodesFinished: number;
  successes: number;
  connection: Connection;
  errors: string[];
}

export const SMOOTHING_WINDOW = 10;

export function initialViewModel(): ViewModel {
  return {
    config: null,
    lastState: null,
    control: "AGENT",
    takeoverActive: false,
    labelMode: false,
    episode: 0,
    stepIndex: 0,
    paused: false,
    seqGap: false,
    lastSeq: 0,
    supervisedPerEpisode: [],
    smoothedSupervised: [],
    episodesFinished: 0,
    successes: 0,
    connection: "connecting",
    errors: [],
  };
}

export function movingAverage(series: number[], n: number): number[] {
  if (n < 1) {
    throw new Error(`window must be >= 1, got ${n}`);
  }
  const out: number[] = [];
  let acc = 0;
  for (let i = 0; i < series.length; i++) {
    acc += series[i];
    if (i - n >= 0) {
      acc -= series[i - n];
    }
    out.push(acc / Math.min(i + 1, n));
  }
  return out;
}

export function applyMessage(vm: ViewModel, msg: SessionMessage): ViewModel {
  if (vm.lastSeq > 0 && msg.seq > vm.lastSeq + 1) {
    vm.seqGap = true;
  }
  vm.lastSeq = Math.max(vm.lastSeq, msg.seq);
  switch (msg.kind) {
    case "CONFIG":
      vm.config = msg.payload as unknown as ConfigPayload;
      break;
    case "STATE": {
      const s = msg.payload as unknown as StatePayload;
      vm.lastState = s;
      vm.episode = s.episode;
      vm.stepIndex = s.step_index;
      vm.paused = s.paused;
      vm.control = s.f_demo === 1 ? (s.control === "human" ? "HUMAN" : "GATE") : "AGENT";
      break;
    }
    case "EPISODE_END": {
      const p = msg.payload as unknown as EpisodeEndPayload;
      if (p.metrics !== null && p.metrics !== undefined) {
        vm.supervisedPerEpisode.push(p.metrics.supervised_steps);
        vm.smoothedSupervised = movingAverage(vm.supervisedPerEpisode, SMOOTHING_WINDOW);
        vm.episodesFinished += 1;
        if (p.metrics.success) {
          vm.successes += 1;
        }
      }
      vm.takeoverActive = false;
      break;
    }
    case "ERROR":
      vm.errors.push(String((msg.payload as { detail?: unknown }).detail ?? "unknown"));
      break;
    default:
      break;
  }
  return vm;
}

export function setConnection(vm: ViewModel, c: Connection): ViewModel {
  vm.connection = c;
  if (c !== "connected") {
    vm.takeoverActive = false;
  }
  return vm;
}
