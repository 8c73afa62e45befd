import init, { extract, blend, shift } from "./pkg/tweenforge_web.js";

const $ = (id) => document.getElementById(id);

function plot(canvas, series, marks = []) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const all = series.flatMap((s) => s.values);
  let lo = Math.min(...all), hi = Math.max(...all);
  if (hi - lo < 1e-9) { lo -= 1; hi += 1; }
  const n = Math.max(...series.map((s) => s.values.length));
  const x = (t) => 10 + (t / Math.max(n - 1, 1)) * (w - 20);
  const y = (v) => h - 10 - ((v - lo) / (hi - lo)) * (h - 20);
  for (const m of marks) {
    ctx.strokeStyle = m.color;
    ctx.setLineDash(m.dash || []);
    for (const t of m.frames) {
      ctx.beginPath(); ctx.moveTo(x(t), 0); ctx.lineTo(x(t), h); ctx.stroke();
    }
  }
  ctx.setLineDash([]);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = s.width || 1.5;
    ctx.beginPath();
    s.values.forEach((v, t) => (t ? ctx.lineTo(x(t), y(v)) : ctx.moveTo(x(t), y(v))));
    ctx.stroke();
  }
}

function runExtract() {
  const sep = +$("ex-sep").value;
  $("ex-sep-v").textContent = sep;
  const r = JSON.parse(extract(+$("ex-seed").value, 120, $("ex-step").checked, sep, 1e-6));
  const colors = ["#27c", "#2a2", "#a2a"];
  plot($("ex-plot"), r.curves.map((v, i) => ({ values: v, color: colors[i] })), [
    { frames: r.ground_truth, color: "#bbb", dash: [3, 3] },
    { frames: r.keyposes, color: "#c33" },
  ]);
  $("ex-info").textContent = `${r.keyposes.length} keyposes extracted, ${r.ground_truth.length} generator blocks`;
}

function runBlend() {
  const ease = +$("bl-ease").value, beta = +$("bl-beta").value;
  $("bl-ease-v").textContent = ease.toFixed(2);
  $("bl-beta-v").textContent = beta.toFixed(2);
  const r = JSON.parse(blend(0, 1, 48, ease, beta));
  plot($("bl-plot"), [
    { values: r.interp, color: "#27c" },
    { values: r.synth, color: "#e80" },
    { values: r.pred, color: "#222", width: 2.5 },
  ]);
}

function runShift() {
  const d = +$("sh-shift").value;
  $("sh-shift-v").textContent = d;
  const r = JSON.parse(shift(+$("sh-seed").value, 96, d));
  plot($("sh-plot"), [
    { values: r.ground_truth, color: "#888" },
    { values: r.prediction, color: "#222" },
  ], [{ frames: r.keyposes, color: "#fcc" }]);
  $("sh-info").textContent =
    `STL1 ${r.stl1.toFixed(4)}   L1 ${r.plain_l1.toFixed(4)}   NPSS ${r.npss.toFixed(4)}`;
}

await init();
for (const id of ["ex-seed", "ex-sep", "ex-step"]) $(id).addEventListener("input", runExtract);
for (const id of ["bl-ease", "bl-beta"]) $(id).addEventListener("input", runBlend);
for (const id of ["sh-seed", "sh-shift"]) $(id).addEventListener("input", runShift);
runExtract(); runBlend(); runShift();
