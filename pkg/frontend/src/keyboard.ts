// Keyboard control: the takeover key claims control, arrow keys stream
// HUMAN_ACTION at the control rate, the release key hands control back.
// Label mode redirects arrow input to LABEL messages (off-policy desired
// actions recorded while the agent keeps driving; never executed).

import { clipToBox } from "./protocol.js";

export interface OutboundEmitter {
  (kind: "TAKEOVER" | "RELEASE" | "HUMAN_ACTION" | "LABEL",
   payload?: Record<string, unknown>): void;
}

export interface KeyMap {
  takeover: string;
  release: string;
  labelToggle: string;
  left: string;
  right: string;
  up: string;
  down: string;
}

export const DEFAULT_KEYMAP: KeyMap = {
  takeover: "Space",
  release: "Backspace",
  labelToggle: "KeyL",
  left: "ArrowLeft",
  right: "ArrowRight",
  up: "ArrowUp",
  down: "ArrowDown",
};

const CARTPOLE_RAMP_START = 0.3;
const CARTPOLE_RAMP_MS = 600; // hold time to reach full force

export class KeyboardController {
  takeoverActive = false;
  labelMode = false;
  private held = new Map<string, number>(); // key -> press timestamp (ms)

  constructor(
    private env: "cartpole" | "navsim",
    private actionLow: number[],
    private actionHigh: number[],
    private send: OutboundEmitter,
    private keymap: KeyMap = DEFAULT_KEYMAP,
  ) {}

  keyDown(code: string, tMs: number): void {
    if (code === this.keymap.takeover) {
      if (!this.takeoverActive) {
        this.takeoverActive = true;
        this.send("TAKEOVER");
      }
      return;
    }
    if (code === this.keymap.release) {
      if (this.takeoverActive) {
        this.takeoverActive = false;
        this.send("RELEASE");
      }
      return;
    }
    if (code === this.keymap.labelToggle) {
      this.labelMode = !this.labelMode;
      return;
    }
    if (!this.held.has(code)) {
      this.held.set(code, tMs);
    }
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  /** Called on the control-rate timer; emits at most one message per tick. */
  tick(tMs: number): void {
    const action = this.currentAction(tMs);
    if (action === null) {
      return; // no direction key held: nothing to emit
    }
    if (this.labelMode) {
      this.send("LABEL", { action });
    } else if (this.takeoverActive) {
      this.send("HUMAN_ACTION", { action });
    }
  }

  currentAction(tMs: number): number[] | null {
    const km = this.keymap;
    const left = this.held.get(km.left);
    const right = this.held.get(km.right);
    const up = this.held.get(km.up);
    const down = this.held.get(km.down);
    if (left === undefined && right === undefined && up === undefined
        && down === undefined) {
      return null;
    }
    if (this.env === "cartpole") {
      let a = 0;
      if (right !== undefined) {
        a += this.ramp(tMs - right);
      }
      if (left !== undefined) {
        a -= this.ramp(tMs - left);
      }
      return clipToBox([a], this.actionLow, this.actionHigh);
    }
    const vMax = this.actionHigh[0];
    const wMax = this.actionHigh[1];
    let v = 0;
    let w = 0;
    if (up !== undefined) v += vMax;
    if (down !== undefined) v -= vMax;
    if (right !== undefined) w += wMax;
    if (left !== undefined) w -= wMax;
    return clipToBox([v, w], this.actionLow, this.actionHigh);
  }

  private ramp(heldMs: number): number {
    const frac = Math.min(Math.max(heldMs, 0) / CARTPOLE_RAMP_MS, 1);
    return CARTPOLE_RAMP_START + (1 - CARTPOLE_RAMP_START) * frac;
  }
}
