import init, { fps, ball_query, interpolate, demo_cloud } from "./pkg/hpsl_demo.js";

const canvas = document.getElementById("view");
const ctx = canvas.getContext("2d");
const $ = (id) => document.getElementById(id);
const SCALE = canvas.width / 2.2;

const state = { coords: new Float64Array(), centroids: null, ball: null, query: null, colours: null };

const toScreen = (x, y) => [canvas.width / 2 + x * SCALE, canvas.height / 2 - y * SCALE];
const fromScreen = (px, py) => [(px - canvas.width / 2) / SCALE, (canvas.height / 2 - py) / SCALE];

function status(text, isError = false) {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "error" : "";
}

function timed(label, fn) {
  try {
    const t0 = performance.now();
    const out = fn();
    status(`${label}: ${(performance.now() - t0).toFixed(1)} ms`);
    return out;
  } catch (e) {
    status(String(e.message ?? e), true);
    return null;
  }
}

// Hue from position so neighbouring centroids get related colours.
function centroidColour(x, y) {
  const h = (Math.atan2(y, x) / (2 * Math.PI) + 1) % 1;
  const r = Math.min(1, Math.hypot(x, y));
  const c = (o) => 0.5 + 0.5 * r * Math.cos(2 * Math.PI * (h + o));
  return [c(0), c(1 / 3), c(2 / 3)];
}

function draw() {
  const { coords, centroids, ball, query, colours } = state;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const n = coords.length / 2;
  for (let i = 0; i < n; i++) {
    const [px, py] = toScreen(coords[2 * i], coords[2 * i + 1]);
    if (colours) {
      const [r, g, b] = [0, 1, 2].map((c) => Math.round(255 * colours[3 * i + c]));
      ctx.fillStyle = `rgb(${r},${g},${b})`;
    } else {
      ctx.fillStyle = "#9aa";
    }
    ctx.fillRect(px - 1.5, py - 1.5, 3, 3);
  }
  if (ball) {
    ctx.fillStyle = "#e60";
    for (const i of ball) {
      const [px, py] = toScreen(coords[2 * i], coords[2 * i + 1]);
      ctx.fillRect(px - 2.5, py - 2.5, 5, 5);
    }
    const [qx, qy] = toScreen(query[0], query[1]);
    ctx.strokeStyle = "#e60";
    ctx.beginPath();
    ctx.arc(qx, qy, Number($("radius").value) * SCALE, 0, 2 * Math.PI);
    ctx.stroke();
  }
  if (centroids) {
    ctx.strokeStyle = "#000";
    for (const i of centroids) {
      const [px, py] = toScreen(coords[2 * i], coords[2 * i + 1]);
      ctx.beginPath();
      ctx.arc(px, py, 4, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }
}

function regenerate() {
  const n = Number($("n").value);
  const seed = BigInt(Math.max(0, Math.floor(Number($("seed").value) || 0)));
  state.coords = demo_cloud(n, seed);
  state.centroids = state.ball = state.query = state.colours = null;
  $("m").max = String(Math.min(512, n));
  status(`${n} points`);
  draw();
}

function runFps() {
  const m = Math.min(Number($("m").value), state.coords.length / 2);
  const idx = timed(`FPS of ${m}`, () => fps(state.coords, 2, m, 0));
  if (idx) state.centroids = idx;
  draw();
}

function runBall(x, y) {
  state.query = new Float64Array([x, y]);
  const idx = timed("ball query", () =>
    ball_query(state.coords, 2, state.query, Number($("radius").value), Number($("cap").value)),
  );
  if (idx) {
    state.ball = idx;
    status(`${$("status").textContent}, ${idx.length} points`);
  }
  draw();
}

function runInterpolation() {
  if (!state.centroids) runFps();
  if (!state.centroids) return;
  const src = new Float64Array(state.centroids.length * 2);
  const values = new Float64Array(state.centroids.length * 3);
  state.centroids.forEach((i, j) => {
    const x = state.coords[2 * i];
    const y = state.coords[2 * i + 1];
    src.set([x, y], 2 * j);
    values.set(centroidColour(x, y), 3 * j);
  });
  const out = timed("interpolation", () => interpolate(state.coords, src, values, 2, Number($("k").value)));
  if (out) state.colours = out;
  draw();
}

function bindOutputs() {
  for (const out of document.querySelectorAll("output[for]")) {
    const input = $(out.htmlFor.value);
    const sync = () => (out.textContent = input.value);
    input.addEventListener("input", sync);
    sync();
  }
}

await init();
bindOutputs();
$("regen").addEventListener("click", regenerate);
$("n").addEventListener("change", regenerate);
$("run-fps").addEventListener("click", runFps);
$("m").addEventListener("change", runFps);
$("run-interp").addEventListener("click", runInterpolation);
$("k").addEventListener("change", runInterpolation);
canvas.addEventListener("click", (e) => {
  const rect = canvas.getBoundingClientRect();
  runBall(...fromScreen(e.clientX - rect.left, e.clientY - rect.top));
});
regenerate();
