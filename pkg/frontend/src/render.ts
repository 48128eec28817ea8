// 2D canvas drawing. Only the context operations used here are typed, so
// tests can pass a recording stub instead of a real canvas.

import { CartpoleState, NavsimState, isCartpole } from "./protocol.js";
import { ViewModel } from "./viewmodel.js";

export interface Ctx2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  font: string;
}

const POLE_LENGTH_PX = 80;
const TRACK_HALF_METERS = 2.6;

export function poleEndpoints(s: CartpoleState, w: number, h: number):
    { x0: number; y0: number; x1: number; y1: number } {
  const cartX = (w / 2) + (s.x / TRACK_HALF_METERS) * (w / 2);
  const cartY = h * 0.7;
  return {
    x0: cartX,
    y0: cartY,
    x1: cartX + POLE_LENGTH_PX * Math.sin(s.theta),
    y1: cartY - POLE_LENGTH_PX * Math.cos(s.theta),
  };
}

export function renderCartpole(ctx: Ctx2D, w: number, h: number, s: CartpoleState): void {
  const y = h * 0.7;
  ctx.strokeStyle = "#888";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(0, y + 12);
  ctx.lineTo(w, y + 12);
  ctx.stroke();
  const p = poleEndpoints(s, w, h);
  ctx.fillStyle = "#334";
  ctx.fillRect(p.x0 - 20, y, 40, 12);
  ctx.strokeStyle = "#c62";
  ctx.lineWidth = 4;
  ctx.beginPath();
  ctx.moveTo(p.x0, p.y0);
  ctx.lineTo(p.x1, p.y1);
  ctx.stroke();
}

const NAV_SCALE = 120; // pixels per meter
const NAV_MAX_RANGE = 2.0;

function navToPx(x: number, y: number, w: number, h: number): [number, number] {
  return [w * 0.2 + x * NAV_SCALE, h * 0.5 - y * NAV_SCALE];
}

export function renderNavsim(ctx: Ctx2D, w: number, h: number, s: NavsimState): void {
  ctx.strokeStyle = "#9cf";
  ctx.lineWidth = 1;
  const beams = s.beams ?? [];
  for (let k = 0; k < beams.length; k++) {
    const ang = s.heading - Math.PI / 2 + (k * Math.PI) / Math.max(beams.length - 1, 1);
    const d = Math.min(beams[k], NAV_MAX_RANGE);
    const [x0, y0] = navToPx(s.x, s.y, w, h);
    const [x1, y1] = navToPx(s.x + d * Math.cos(ang), s.y + d * Math.sin(ang), w, h);
    ctx.beginPath();
    ctx.moveTo(x0, y0);
    ctx.lineTo(x1, y1);
    ctx.stroke();
  }
  ctx.fillStyle = "#c33";
  for (const [cx, cy, r] of s.obstacles) {
    const [px, py] = navToPx(cx, cy, w, h);
    ctx.beginPath();
    ctx.arc(px, py, r * NAV_SCALE, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.fillStyle = "#2a2";
  const [gx, gy] = navToPx(s.goal[0], s.goal[1], w, h);
  ctx.beginPath();
  ctx.arc(gx, gy, 0.15 * NAV_SCALE, 0, 2 * Math.PI);
  ctx.fill();
  ctx.fillStyle = "#117";
  const [rx, ry] = navToPx(s.x, s.y, w, h);
  ctx.beginPath();
  ctx.arc(rx, ry, 8, 0, 2 * Math.PI);
  ctx.fill();
  ctx.strokeStyle = "#117";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(rx, ry);
  ctx.lineTo(rx + 14 * Math.cos(s.heading), ry - 14 * Math.sin(s.heading));
  ctx.stroke();
}

const BADGE_COLOR: Record<string, string> = {
  AGENT: "#2a2",
  HUMAN: "#c62",
  GATE: "#c33",
};

export function renderFrame(ctx: Ctx2D, w: number, h: number, vm: ViewModel): void {
  ctx.clearRect(0, 0, w, h);
  if (vm.lastState !== null) {
    const s = vm.lastState.state;
    if (isCartpole(s)) {
      renderCartpole(ctx, w, h, s);
    } else {
      renderNavsim(ctx, w, h, s);
    }
  }
  ctx.fillStyle = BADGE_COLOR[vm.control];
  ctx.fillRect(10, 10, 90, 22);
  ctx.fillStyle = "#fff";
  ctx.font = "13px monospace";
  ctx.fillText(vm.control + (vm.labelMode ? " [label]" : ""), 16, 25);
  ctx.fillStyle = "#000";
  ctx.fillText(`ep ${vm.episode} step ${vm.stepIndex}`, 10, 50);
  if (vm.paused) {
    ctx.fillText("PAUSED (no supervisor traffic)", 10, 66);
  }
  if (vm.seqGap) {
    ctx.fillStyle = "#c33";
    ctx.fillText("warning: missed messages", 10, 82);
  }
  if (vm.connection !== "connected") {
    ctx.fillStyle = "#c33";
    ctx.fillRect(0, h - 26, w, 26);
    ctx.fillStyle = "#fff";
    ctx.fillText("disconnected - reconnecting, input disabled", 10, h - 9);
  }
  renderChart(ctx, w, h, vm.smoothedSupervised);
}

function renderChart(ctx: Ctx2D, w: number, h: number, series: number[]): void {
  if (series.length < 2) {
    return;
  }
  const x0 = w - 210;
  const y0 = 20;
  const cw = 200;
  const ch = 80;
  const peak = Math.max(...series, 1);
  ctx.strokeStyle = "#46a";
  ctx.lineWidth = 1;
  ctx.beginPath();
  series.forEach((v, i) => {
    const px = x0 + (i / (series.length - 1)) * cw;
    const py = y0 + ch - (v / peak) * ch;
    if (i === 0) {
      ctx.moveTo(px, py);
    } else {
      ctx.lineTo(px, py);
    }
  });
  ctx.stroke();
  ctx.fillStyle = "#000";
  ctx.fillText("supervised/episode (n=10 avg)", x0, y0 + ch + 14);
}
