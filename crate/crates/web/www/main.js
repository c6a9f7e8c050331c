import init, { careGain, simulate, blrUpdate } from "./pkg/sdre_ident_web.js";

const $ = (id) => document.getElementById(id);
const NAMES = ["mu1 lap", "mu2 adv", "mu3 id", "mu4 x^2", "mu5 x^3", "mu6 x x'", "mu7 x'''"];
const TRUTH = {
  test1: [1, 0, 11, 0, -11, 0, 0],
  test2: [0.01, 0, 0, 0, 0, 1, 0],
  test3: [0.5, 0, 0, 0, 0, 6, -1],
};
const HORIZON = { test1: 0.5, test2: 2, test3: 2 };

function show(el, fn) {
  try {
    el.classList.remove("err");
    el.textContent = fn();
  } catch (e) {
    el.classList.add("err");
    el.textContent = String(e);
  }
}

function fillCoefficients() {
  const preset = $("preset").value;
  $("horizon").value = HORIZON[preset];
  $("coeffs").innerHTML = NAMES.map((n, i) =>
    `<label>${n} <input type="number" step="any" id="mu${i}" value="${TRUTH[preset][i]}"></label>`).join("");
}

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(40, 10, w - 50, h - 30);
}

function plotLines(canvas, xs, series, colors) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  axes(ctx, w, h);
  const all = series.flat();
  let lo = Math.min(...all), hi = Math.max(...all);
  if (hi - lo < 1e-12) { hi += 1; lo -= 1; }
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const px = (x) => 40 + (x - x0) / (x1 - x0) * (w - 50);
  const py = (y) => 10 + (hi - y) / (hi - lo) * (h - 30);
  ctx.fillStyle = "#555";
  ctx.fillText(hi.toPrecision(3), 2, 18);
  ctx.fillText(lo.toPrecision(3), 2, h - 22);
  series.forEach((ys, k) => {
    ctx.strokeStyle = colors[k];
    ctx.beginPath();
    ys.forEach((y, i) => (i ? ctx.lineTo(px(xs[i]), py(y)) : ctx.moveTo(px(xs[i]), py(y))));
    ctx.stroke();
  });
}

function runSimulation() {
  const preset = $("preset").value;
  const mu = NAMES.map((_, i) => Number($(`mu${i}`).value));
  const request = { preset, t_end: Number($("horizon").value), controller_mu: mu, stride: 1 };
  show($("sim-info"), () => {
    const t = performance.now();
    const r = JSON.parse(simulate(JSON.stringify(request)));
    const last = (traj) => traj.states[traj.states.length - 1];
    plotLines($("profile"), r.grid, [r.uncontrolled.states[0], last(r.uncontrolled), last(r.controlled)],
      ["#bbb", "#d33", "#26c"]);
    plotLines($("cost"), r.times, [r.uncontrolled.cost, r.controlled.cost], ["#d33", "#26c"]);
    const ms = (performance.now() - t).toFixed(0);
    return `initial (grey), free (red), controlled (blue) at t = ${r.times[r.times.length - 1]}; ` +
      `cost ${r.controlled.cost.at(-1).toExponential(3)} vs ${r.uncontrolled.cost.at(-1).toExponential(3)} ` +
      `(${r.controlled.fallbacks} zero-gain steps, ${ms} ms)`;
  });
}

let blrState = null;

function runBlr() {
  show($("blr-out"), () => {
    const req = JSON.parse($("blr-in").value);
    if (blrState) Object.assign(req, blrState);
    const resp = JSON.parse(blrUpdate(JSON.stringify(req)));
    blrState = { mean: resp.mean, cov: resp.cov };
    return JSON.stringify(resp, null, 1);
  });
}

await init();
$("status").textContent = "Ready.";
fillCoefficients();
$("preset").addEventListener("change", fillCoefficients);
$("run-sim").addEventListener("click", runSimulation);
$("run-care").addEventListener("click", () =>
  show($("care-out"), () => JSON.stringify(JSON.parse(careGain($("care-in").value)), null, 1)));
$("run-blr").addEventListener("click", runBlr);
$("reset-blr").addEventListener("click", () => { blrState = null; $("blr-out").textContent = ""; });
