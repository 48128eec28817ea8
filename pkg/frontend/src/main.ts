// DOM bootstrap: connect, pump messages into the view model, render each
// state within one control period, and sample the keyboard on a timer.

import { SessionClient } from "./client.js";
import { KeyboardController } from "./keyboard.js";
import { Ctx2D, renderFrame } from "./render.js";
import { ConfigPayload } from "./protocol.js";
import { applyMessage, initialViewModel, setConnection } from "./viewmodel.js";

const params = new URLSearchParams(window.location.search);
const port = params.get("port") ?? "8765";
const url = params.get("url") ?? `ws://${window.location.hostname || "localhost"}:${port}/session`;

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d") as unknown as Ctx2D;
const vm = initialViewModel();

let keyboard: KeyboardController | null = null;
let inputTimer: number | null = null;

const client = new SessionClient(
  url,
  (msg) => {
    applyMessage(vm, msg);
    if (msg.kind === "CONFIG") {
      startInput(msg.payload as unknown as ConfigPayload);
    }
    renderFrame(ctx, canvas.width, canvas.height, vm);
  },
  (status) => {
    setConnection(vm, status);
    renderFrame(ctx, canvas.width, canvas.height, vm);
  },
);

function startInput(config: ConfigPayload): void {
  if (inputTimer !== null) {
    clearInterval(inputTimer);
  }
  keyboard = new KeyboardController(
    config.env, config.action_low, config.action_high,
    (kind, payload) => {
      if (vm.connection === "connected") {
        client.send(kind, payload ?? {});
        if (kind === "TAKEOVER") vm.takeoverActive = true;
        if (kind === "RELEASE") vm.takeoverActive = false;
      }
    });
  const periodMs = 1000 / config.control_hz;
  inputTimer = setInterval(() => {
    keyboard?.tick(performance.now());
    if (keyboard) {
      vm.labelMode = keyboard.labelMode;
    }
  }, periodMs) as unknown as number;
}

window.addEventListener("keydown", (ev) => {
  if (keyboard && !ev.repeat) {
    keyboard.keyDown(ev.code, performance.now());
    if (ev.code === "Space") ev.preventDefault();
  }
});
window.addEventListener("keyup", (ev) => keyboard?.keyUp(ev.code));

client.connect();
