import init, { filter_response, train_synthetic, cross_validate_synthetic } from "./pkg/mibci_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function axes(ctx, w, h, pad, xr, yr, xlabel, ylabel) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#444";
  ctx.font = "12px sans-serif";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
  ctx.fillText(xlabel, w / 2, h - 6);
  ctx.save();
  ctx.translate(12, h / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(ylabel, 0, 0);
  ctx.restore();
  const x = (v) => pad + ((v - xr[0]) / (xr[1] - xr[0])) * (w - 1.5 * pad);
  const y = (v) => h - pad - ((v - yr[0]) / (yr[1] - yr[0])) * (h - 1.5 * pad);
  for (let i = 0; i <= 4; i++) {
    const yv = yr[0] + ((yr[1] - yr[0]) * i) / 4;
    ctx.fillText(yv.toFixed(Math.abs(yr[1] - yr[0]) < 5 ? 2 : 0), 4 + 14, y(yv) + 4);
  }
  return { x, y };
}

function run(statusId, fn) {
  const status = $(statusId);
  status.className = "status";
  status.textContent = "running…";
  setTimeout(() => {
    const t0 = performance.now();
    try {
      fn();
      status.textContent = `done in ${((performance.now() - t0) / 1000).toFixed(2)} s`;
    } catch (e) {
      status.className = "status error";
      status.textContent = String(e.message || e);
    }
  }, 10);
}

function drawFilter() {
  const fs = num("f-fs");
  const v = JSON.parse(filter_response(num("f-order"), num("f-low"), num("f-high"), fs, 512));
  const c = $("f-canvas");
  const ctx = c.getContext("2d");
  const { x, y } = axes(ctx, c.width, c.height, 40, [0, fs / 2], [-60, 3], "frequency (Hz)", "dB");
  ctx.strokeStyle = "#d33";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(x(0), y(-3));
  ctx.lineTo(x(fs / 2), y(-3));
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.strokeStyle = "#1f5fbf";
  ctx.lineWidth = 2;
  ctx.beginPath();
  v.frequencies_hz.forEach((f, i) => {
    const m = Math.max(v.magnitude_db[i], -60);
    i ? ctx.lineTo(x(f), y(m)) : ctx.moveTo(x(f), y(m));
  });
  ctx.stroke();
  ctx.lineWidth = 1;
  ctx.fillStyle = "#222";
  ctx.fillText(`edges: ${v.edge_db[0].toFixed(2)} dB, ${v.edge_db[1].toFixed(2)} dB; ${v.poles.length} poles, ${v.stable ? "stable" : "UNSTABLE"}`, 60, 24);
}

function drawTrain() {
  const v = JSON.parse(train_synthetic($("t-method").value, num("t-mod"), num("t-snr"), num("t-trials"), num("t-seed")));
  const c = $("t-canvas");
  const ctx = c.getContext("2d");
  const unit = (a) => {
    const n = Math.hypot(...a);
    return a.map((x) => x / n);
  };
  const t = unit(v.true_pattern);
  const e = unit(v.estimated_pattern);
  const lim = Math.max(...t.map(Math.abs), ...e.map(Math.abs)) * 1.1;
  const n = v.channels.length;
  const { x, y } = axes(ctx, c.width, c.height, 40, [0, n], [-lim, lim], "channel", "pattern (unit norm)");
  v.channels.forEach((ch, i) => {
    ctx.fillStyle = "#bbb";
    ctx.fillRect(x(i + 0.15), y(Math.max(t[i], 0)), x(i + 0.45) - x(i + 0.15), Math.abs(y(t[i]) - y(0)));
    ctx.fillStyle = "#1f5fbf";
    ctx.fillRect(x(i + 0.5), y(Math.max(e[i], 0)), x(i + 0.8) - x(i + 0.5), Math.abs(y(e[i]) - y(0)));
    ctx.fillStyle = "#444";
    ctx.fillText(ch, x(i + 0.3), c.height - 26);
  });
  ctx.fillStyle = "#222";
  ctx.fillText(`${v.method}: |cos(true, estimated)| = ${v.abs_cosine.toFixed(3)}, training accuracy ${(100 * v.training_accuracy).toFixed(1)}%   (grey: true, blue: estimated)`, 60, 24);

  const s = $("t-spectral");
  const sctx = s.getContext("2d");
  if (!v.spectral_weights.length) {
    sctx.clearRect(0, 0, s.width, s.height);
    sctx.fillStyle = "#666";
    sctx.fillText("spectral weights are learned by SpecCSP only", 60, 40);
    return;
  }
  const f = v.spectral_frequencies_hz;
  const wmax = Math.max(...v.spectral_weights) * 1.1;
  const ax = axes(sctx, s.width, s.height, 40, [f[0] - 0.5, f[f.length - 1] + 0.5], [0, wmax], "frequency (Hz)", "weight");
  sctx.fillStyle = "#2a9d5c";
  f.forEach((fr, i) => {
    const w = v.spectral_weights[i];
    sctx.fillRect(ax.x(fr - 0.4), ax.y(w), ax.x(fr + 0.4) - ax.x(fr - 0.4), ax.y(0) - ax.y(w));
  });
}

function drawCv() {
  const v = JSON.parse(
    cross_validate_synthetic(num("c-mod"), num("c-snr"), num("c-trials"), num("c-seed"), num("c-folds"), num("c-margin")),
  );
  const c = $("c-canvas");
  const ctx = c.getContext("2d");
  const { x, y } = axes(ctx, c.width, c.height, 40, [0, v.length], [0, 1], "method", "accuracy");
  ctx.strokeStyle = "#d33";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(x(0), y(0.5));
  ctx.lineTo(x(v.length), y(0.5));
  ctx.stroke();
  ctx.setLineDash([]);
  v.forEach((m, i) => {
    ctx.fillStyle = "#9bb7e0";
    ctx.fillRect(x(i + 0.2), y(m.mean_accuracy), x(i + 0.8) - x(i + 0.2), y(0) - y(m.mean_accuracy));
    ctx.fillStyle = "#1f3f7f";
    m.fold_accuracy.forEach((a, k) => {
      ctx.beginPath();
      ctx.arc(x(i + 0.25 + (0.5 * k) / Math.max(1, m.fold_accuracy.length - 1)), y(a), 3, 0, 2 * Math.PI);
      ctx.fill();
    });
    ctx.fillStyle = "#222";
    const sd = Number.isFinite(m.sd_accuracy) ? (100 * m.sd_accuracy).toFixed(1) : "n/a";
    ctx.fillText(`${m.method}: ${(100 * m.mean_accuracy).toFixed(1)} ± ${sd}%`, x(i + 0.22), 20);
    ctx.fillText(`TPR ${(100 * m.tpr).toFixed(0)}%  TNR ${(100 * m.tnr).toFixed(0)}%`, x(i + 0.22), 36);
  });
}

await init();
$("f-run").onclick = () => run("f-status", drawFilter);
$("t-run").onclick = () => run("t-status", drawTrain);
$("c-run").onclick = () => run("c-status", drawCv);
run("f-status", drawFilter);
