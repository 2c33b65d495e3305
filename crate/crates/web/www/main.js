import init, { dct_truncate, augment_preview, Forecaster } from "./pkg/somoformer_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];

function bounds(points, pad = 0.1) {
  let [x0, x1, y0, y1] = [Infinity, -Infinity, Infinity, -Infinity];
  for (const [x, y] of points) {
    x0 = Math.min(x0, x); x1 = Math.max(x1, x);
    y0 = Math.min(y0, y); y1 = Math.max(y1, y);
  }
  const side = Math.max(x1 - x0, y1 - y0, 1e-6) * (1 + 2 * pad);
  return { cx: (x0 + x1) / 2, cy: (y0 + y1) / 2, side };
}

// Maps ground-plane points onto a square canvas with a shared scale.
function projector(canvas, b) {
  const s = Math.min(canvas.width, canvas.height) / b.side;
  return ([x, y]) => [canvas.width / 2 + (x - b.cx) * s, canvas.height / 2 - (y - b.cy) * s];
}

function polyline(ctx, pts, color, dash = [], width = 2) {
  if (pts.length === 0) return;
  ctx.strokeStyle = color; ctx.lineWidth = width; ctx.setLineDash(dash);
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
  ctx.stroke();
  ctx.setLineDash([]);
}

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

// DCT explorer

let signal = [];

function randomWalk(n) {
  const out = [0];
  for (let i = 1; i < n; i++) out.push(out[i - 1] + (Math.random() - 0.5));
  return out;
}

function drawDct() {
  const keep = +$("dct-keep").value;
  $("dct-keep-val").textContent = keep;
  const v = JSON.parse(dct_truncate(Float64Array.from(signal), keep));
  const c = $("dct-signal"), ctx = clear(c);
  const lo = Math.min(...signal, ...v.reconstruction), hi = Math.max(...signal, ...v.reconstruction);
  const span = Math.max(hi - lo, 1e-6);
  const xy = (arr) => arr.map((y, i) => [20 + (i / (arr.length - 1)) * (c.width - 40), c.height - 20 - ((y - lo) / span) * (c.height - 40)]);
  polyline(ctx, xy(signal), "#999");
  polyline(ctx, xy(v.reconstruction), COLORS[0]);

  const k = $("dct-coef"), kctx = clear(k);
  const m = Math.max(...v.coefficients.map(Math.abs), 1e-9);
  const w = (k.width - 20) / v.coefficients.length;
  v.coefficients.forEach((x, i) => {
    kctx.fillStyle = i < keep ? COLORS[0] : "#ccc";
    const h = (Math.abs(x) / m) * (k.height / 2 - 10);
    kctx.fillRect(10 + i * w, x >= 0 ? k.height / 2 - h : k.height / 2, Math.max(w - 1, 1), h);
  });
  $("dct-stats").textContent =
    `energy kept ${(100 * v.energy_kept).toFixed(2)}%   max reconstruction error ${v.max_error.toExponential(2)}`;
}

function resetDct() {
  const n = Math.min(Math.max(+$("dct-len").value | 0, 2), 64);
  signal = randomWalk(n);
  $("dct-keep").max = n;
  if (+$("dct-keep").value > n) $("dct-keep").value = n;
  drawDct();
}

function setupDct() {
  const c = $("dct-signal");
  let drawing = false;
  const edit = (e) => {
    if (!drawing) return;
    const r = c.getBoundingClientRect();
    const i = Math.round(((e.clientX - r.left - 20) / (c.width - 40)) * (signal.length - 1));
    if (i < 0 || i >= signal.length) return;
    const lo = Math.min(...signal), hi = Math.max(...signal), span = Math.max(hi - lo, 1);
    signal[i] = lo + ((c.height - 20 - (e.clientY - r.top)) / (c.height - 40)) * span;
    drawDct();
  };
  c.addEventListener("pointerdown", (e) => { drawing = true; edit(e); });
  window.addEventListener("pointerup", () => (drawing = false));
  c.addEventListener("pointermove", edit);
  $("dct-keep").addEventListener("input", drawDct);
  $("dct-len").addEventListener("change", resetDct);
  $("dct-reset").addEventListener("click", resetDct);
  resetDct();
}

// Augmentation viewer

function drawTracks(canvas, view, historyLen) {
  const ctx = clear(canvas);
  const proj = projector(canvas, bounds(view.roots.flat()));
  view.roots.forEach((track, s) => {
    const color = COLORS[s % COLORS.length];
    polyline(ctx, track.slice(0, historyLen).map(proj), color);
    polyline(ctx, track.slice(historyLen - 1).map(proj), color, [5, 4]);
    const [x, y] = proj(track[historyLen - 1]);
    ctx.fillStyle = color;
    ctx.fillText(`P${s}`, x + 5, y - 5);
  });
}

function drawGrid(canvas, cells, grid) {
  const ctx = clear(canvas);
  const size = canvas.width / grid;
  ctx.strokeStyle = "#bbb";
  for (let i = 0; i <= grid; i++) {
    ctx.beginPath(); ctx.moveTo(i * size, 0); ctx.lineTo(i * size, canvas.height); ctx.stroke();
    ctx.beginPath(); ctx.moveTo(0, i * size); ctx.lineTo(canvas.width, i * size); ctx.stroke();
  }
  // Cell index is ix * grid + iz; x runs right, z up.
  cells.forEach((cell, s) => {
    const ix = Math.floor(cell / grid), iz = cell % grid;
    ctx.fillStyle = COLORS[s % COLORS.length];
    ctx.globalAlpha = 0.6;
    ctx.fillRect(ix * size + 2, canvas.height - (iz + 1) * size + 2, size - 4, size - 4);
    ctx.globalAlpha = 1;
  });
}

function drawAugment() {
  try {
    const v = JSON.parse(augment_preview(
      BigInt(+$("aug-seed").value | 0), +$("aug-persons").value, +$("aug-grid").value,
      $("aug-rotate").checked, $("aug-reverse").checked, $("aug-permute").checked));
    drawTracks($("aug-before"), v.original, v.history_len);
    drawTracks($("aug-after"), v.augmented, v.history_len);
    drawGrid($("grid-before"), v.original.cells, v.grid);
    drawGrid($("grid-after"), v.augmented.cells, v.grid);
    $("aug-stats").textContent =
      `rotation ${(v.angle * 180 / Math.PI).toFixed(1)}°   person i moved to slot ${JSON.stringify(v.permutation)}\n` +
      `cells before ${JSON.stringify(v.original.cells)}   after ${JSON.stringify(v.augmented.cells)}`;
  } catch (e) {
    $("aug-stats").textContent = String(e);
  }
}

function setupAugment() {
  for (const id of ["aug-seed", "aug-persons", "aug-grid", "aug-rotate", "aug-reverse", "aug-permute"]) {
    $(id).addEventListener("change", drawAugment);
  }
  drawAugment();
}

// Forecaster

let forecaster = null;
let losses = [];
let running = false;

function drawForecast() {
  if (!forecaster) return;
  const idx = Math.min(Math.max(+$("fc-index").value | 0, 0), forecaster.windows() - 1);
  const v = JSON.parse(forecaster.forecast(idx));
  const c = $("fc-scene"), ctx = clear(c);
  const all = [v.truth, v.prediction, v.zero_velocity].flat(3);
  const proj = projector(c, bounds(all));
  v.truth.forEach((joints, s) => joints.forEach((track, j) => {
    polyline(ctx, track.slice(0, v.history_len).map(proj), "#333", [], 2);
    polyline(ctx, track.slice(v.history_len - 1).map(proj), "#aaa", [], 2);
    polyline(ctx, [track[v.history_len - 1], ...v.zero_velocity[s][j]].map(proj), "#ff7f0e", [3, 3], 2);
    polyline(ctx, [track[v.history_len - 1], ...v.prediction[s][j]].map(proj), COLORS[0], [], 2);
  }));
  $("fc-stats").textContent =
    `window ${idx}: MPJPE ${(100 * v.mpjpe).toFixed(2)} cm   zero velocity ${(100 * v.zero_velocity_mpjpe).toFixed(2)} cm`;
}

function drawLoss() {
  const c = $("fc-loss"), ctx = clear(c);
  const pts = losses.filter((l) => l > 0);
  if (pts.length < 2) return;
  const logs = pts.map(Math.log10), lo = Math.min(...logs), hi = Math.max(...logs), span = Math.max(hi - lo, 1e-6);
  polyline(ctx, logs.map((y, i) => [10 + (i / (logs.length - 1)) * (c.width - 20), c.height - 10 - ((y - lo) / span) * (c.height - 20)]), COLORS[1]);
  ctx.fillStyle = "#444";
  ctx.fillText(`log10 loss ${hi.toFixed(2)} → ${logs[logs.length - 1].toFixed(2)}`, 14, 14);
}

function newForecaster() {
  running = false;
  if (forecaster) forecaster.free();
  forecaster = new Forecaster(BigInt(+$("fc-seed").value | 0), +$("fc-windows").value, +$("fc-epochs").value);
  losses = [];
  $("fc-index").max = forecaster.windows() - 1;
  drawLoss();
  drawForecast();
}

function trainLoop() {
  if (!running || !forecaster) return;
  const t0 = performance.now();
  let r;
  do {
    r = JSON.parse(forecaster.train(5));
    if (Number.isFinite(r.loss)) losses.push(r.loss);
  } while (!r.done && performance.now() - t0 < 30);
  drawLoss();
  drawForecast();
  $("fc-train").textContent = r.done ? "Done" : "Pause";
  if (r.done) running = false;
  else requestAnimationFrame(trainLoop);
}

function setupForecaster() {
  $("fc-new").addEventListener("click", () => { newForecaster(); $("fc-train").textContent = "Train"; });
  $("fc-train").addEventListener("click", () => {
    running = !running;
    $("fc-train").textContent = running ? "Pause" : "Train";
    trainLoop();
  });
  $("fc-index").addEventListener("change", drawForecast);
  newForecaster();
}

init().then(() => {
  $("status").textContent = "";
  setupDct();
  setupAugment();
  setupForecaster();
}).catch((e) => {
  $("status").textContent = `Failed to load the WebAssembly module: ${e}`;
});
