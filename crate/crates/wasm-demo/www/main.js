import init, { PathExplorer, theta_curve, galerkin_residuals } from "./pkg/hydrostat_wasm_demo.js";

const $ = (id) => document.getElementById(id);

// diverging blue/white/red, symmetric about zero
function color(v, scale) {
  const t = Math.max(-1, Math.min(1, v / scale));
  const a = Math.round(255 * (1 - Math.abs(t)));
  return t >= 0 ? [255, a, a] : [a, a, 255];
}

function drawLine(canvas, xs, ys, opts = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  ctx.clearRect(0, 0, w, h);
  const tx = opts.logy ? ys.map((y) => Math.log10(Math.max(y, 1e-18))) : ys;
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const y0 = opts.ymin ?? Math.min(...tx), y1 = opts.ymax ?? Math.max(...tx);
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - y0) / (y1 - y0 || 1)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(opts.logy ? `1e${y1.toFixed(0)}` : y1.toFixed(2), 2, pad + 4);
  ctx.fillText(opts.logy ? `1e${y0.toFixed(0)}` : y0.toFixed(2), 2, h - pad);
  ctx.fillText(x0.toFixed(1), pad, h - 8);
  ctx.fillText(x1.toFixed(1), w - pad - 20, h - 8);
  ctx.strokeStyle = "#c33";
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(tx[i])) : ctx.moveTo(px(x), py(tx[i]))));
  ctx.stroke();
  if (opts.marker !== undefined) {
    ctx.strokeStyle = "#36c";
    ctx.setLineDash([4, 3]);
    ctx.beginPath();
    ctx.moveTo(px(opts.marker), pad);
    ctx.lineTo(px(opts.marker), h - pad);
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

let explorer = null;
let running = false;

function resetPath() {
  running = false;
  $("run").textContent = "run";
  try {
    explorer = new PathExplorer(+$("grid").value, +$("seed").value, +$("shear").value, +$("noise").value, +$("dt").value);
    drawPath();
  } catch (e) {
    explorer = null;
    $("status").textContent = `error: ${e}`;
  }
}

function drawPath() {
  const n = +$("grid").value;
  const vals = explorer.curvature();
  const canvas = $("heat");
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(n, n);
  const scale = Math.max(...vals.map(Math.abs)) || 1;
  // values[i * n + j] at (x_i, z_j); z runs upward
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const [r, g, b] = color(vals[i * n + j], scale);
      const k = 4 * ((n - 1 - j) * n + i);
      img.data.set([r, g, b, 255], k);
    }
  }
  const off = new OffscreenCanvas(n, n);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#000";
  for (const z of [0.05, 0.2]) {
    const y = canvas.height * (1 - z);
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(canvas.width, y);
    ctx.stroke();
  }
  const [thetaRho, thetaKappa, dev] = explorer.cutoffs();
  $("status").textContent =
    `t = ${explorer.time().toFixed(4)}   max |d_zz u| = ${scale.toExponential(3)}\n` +
    `deviation = ${dev.toExponential(3)} (kappa = ${explorer.kappa()})   ` +
    `theta_rho = ${thetaRho.toFixed(4)}   theta_kappa = ${thetaKappa.toFixed(4)}`;
}

function tick() {
  if (!running || !explorer) return;
  try {
    explorer.advance(5);
    drawPath();
    requestAnimationFrame(tick);
  } catch (e) {
    running = false;
    $("status").textContent += `\nerror: ${e}`;
  }
}

function drawTheta() {
  const radius = +$("radius").value;
  const samples = 200;
  try {
    const ys = theta_curve(radius, $("expo").checked, samples);
    const xs = Array.from(ys, (_, i) => (1.25 * radius * i) / (samples - 1));
    drawLine($("theta"), xs, Array.from(ys), { ymin: 0, ymax: 1, marker: radius / 2 });
  } catch (e) {
    console.error(e);
  }
}

function drawSweep() {
  const flat = galerkin_residuals(16, +$("gseed").value, +$("order").value);
  const xs = [], ys = [];
  for (let i = 0; i < flat.length; i += 2) {
    xs.push(flat[i]);
    ys.push(flat[i + 1]);
  }
  drawLine($("resid"), xs, ys, { logy: true });
}

await init();
for (const id of ["grid", "seed", "shear", "noise", "dt"]) $(id).addEventListener("change", resetPath);
$("reset").addEventListener("click", resetPath);
$("run").addEventListener("click", () => {
  running = !running;
  $("run").textContent = running ? "pause" : "run";
  tick();
});
$("radius").addEventListener("input", drawTheta);
$("expo").addEventListener("change", drawTheta);
$("sweep").addEventListener("click", drawSweep);
resetPath();
drawTheta();
drawSweep();
