// Build with: wasm-pack build crates/wasm --target web --out-dir www/pkg
import init, { bound_curves, weights, simulate } from "./pkg/grouptest_wasm.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const $ = (id) => document.getElementById(id);

function fail(el, e) {
  el.innerHTML = `<span class="err">${e.message ?? e}</span>`;
}

function table(headers, rows) {
  const head = headers.map((h) => `<th>${h}</th>`).join("");
  const body = rows.map((r) => "<tr>" + r.map((c) => `<td>${c}</td>`).join("") + "</tr>").join("");
  return `<table><tr>${head}</tr>${body}</table>`;
}

function plotCurves() {
  const canvas = $("curve-canvas");
  const ctx = canvas.getContext("2d");
  let data;
  try {
    data = JSON.parse(bound_curves(Number($("curve-n").value), 199));
  } catch (e) {
    return fail($("curve-msg"), e);
  }
  const names = Object.keys(data.curves);
  const ymax = Math.min(6, Math.max(...names.flatMap((k) => data.curves[k].coefficient)));
  const pad = 40, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  const X = (t) => pad + t * w, Y = (c) => pad + h - (Math.min(c, ymax) / ymax) * h;

  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#333";
  for (let t = 0; t <= 1.001; t += 0.2) ctx.fillText(t.toFixed(1), X(t) - 8, pad + h + 15);
  for (let c = 0; c <= ymax; c += 1) ctx.fillText(String(c), pad - 20, Y(c) + 4);

  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(X(data.crossover), pad);
  ctx.lineTo(X(data.crossover), pad + h);
  ctx.stroke();
  ctx.setLineDash([]);

  names.forEach((name, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.beginPath();
    data.theta.forEach((t, j) => {
      const y = Y(data.curves[name].coefficient[j]);
      j ? ctx.lineTo(X(t), y) : ctx.moveTo(X(t), y);
    });
    ctx.stroke();
  });
  $("legend").innerHTML = names
    .map((name, i) => `<span style="color:${COLORS[i % COLORS.length]}">■ ${name}</span>`)
    .join("");
  $("curve-msg").textContent =
    `Coefficient of n^θ ln n against θ. Dashed line: crossover at θ = ${data.crossover.toFixed(4)}.`;
}

function showWeights() {
  try {
    const d = JSON.parse(weights(Number($("w-s").value), Number($("w-zeta").value), Number($("w-delta").value)));
    $("w-out").innerHTML =
      table(["j", "weight"], d.weights.map((w, j) => [j + 1, w.toFixed(5)])) +
      `<p>score mean ${d.score_mean.toFixed(5)}, threshold ${d.threshold.toFixed(5)}, rate ${d.rate.toFixed(5)}</p>`;
  } catch (e) {
    fail($("w-out"), e);
  }
}

function runSimulation() {
  const out = $("sim-out");
  out.textContent = "running…";
  // Let the status text paint before the synchronous call blocks the page.
  setTimeout(() => {
    try {
      const ratios = new Float64Array($("sim-ratios").value.split(",").map(Number));
      const d = JSON.parse(simulate(
        Number($("sim-n").value), Number($("sim-theta").value),
        $("sim-design").value, $("sim-decoder").value, $("sim-bound").value,
        ratios, Number($("sim-trials").value), Number($("sim-seed").value)));
      out.innerHTML = table(
        ["ratio", "tests", "success rate", "mean mismatch"],
        d.points.map((p) => [p.ratio, p.m, p.success_rate.toFixed(3), p.mean_mismatch.toFixed(2)]),
      ) + `<p>k = ${d.points[0]?.k ?? "-"}</p>`;
    } catch (e) {
      fail(out, e);
    }
  }, 10);
}

await init();
$("curve-go").onclick = plotCurves;
$("w-go").onclick = showWeights;
$("sim-go").onclick = runSimulation;
plotCurves();
showWeights();
