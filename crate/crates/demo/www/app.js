import init, { agreement, blend, curves } from "./pkg/aes_demo.js";

const $ = (id) => document.getElementById(id);
const fmt = (v) => (v === null || v === undefined ? "NA" : Number(v).toFixed(4));

function table(head, rows) {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const body = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${th}</tr>${body}</table>`;
}

function drawHeat(canvas, matrix) {
  const ctx = canvas.getContext("2d");
  const k = matrix.length;
  const pad = 28;
  const cell = (canvas.width - pad) / k;
  const max = Math.max(1, ...matrix.flat());
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "12px system-ui";
  ctx.textAlign = "center";
  ctx.textBaseline = "middle";
  for (let i = 0; i < k; i++) {
    ctx.fillStyle = "#555";
    ctx.fillText(String(i), pad + cell * (i + 0.5), pad / 2);
    ctx.fillText(String(i), pad / 2, pad + cell * (i + 0.5));
    for (let j = 0; j < k; j++) {
      const v = matrix[i][j];
      const t = v / max;
      ctx.fillStyle = `rgba(33, 102, 172, ${0.08 + 0.85 * t})`;
      ctx.fillRect(pad + cell * j, pad + cell * i, cell - 2, cell - 2);
      ctx.fillStyle = t > 0.55 ? "#fff" : "#222";
      ctx.fillText(String(v), pad + cell * (j + 0.5), pad + cell * (i + 0.5));
    }
  }
}

function updateAgreement() {
  const out = JSON.parse(agreement($("truth").value, $("pred").value));
  if (out.error) {
    $("agreement-out").innerHTML = `<p class="err">${out.error}</p>`;
    return;
  }
  drawHeat($("heat"), out.confusion);
  const rows = out.classes.map((c, i) => [i, fmt(c.precision), fmt(c.recall), fmt(c.f1)]);
  $("agreement-out").innerHTML =
    `<p>n = ${out.n} &middot; QWK <b>${fmt(out.qwk)}</b> &middot; exact agreement ${fmt(out.exact_agreement)}` +
    ` <span class="muted">(rows: reference, columns: predicted)</span></p>` +
    table(["score", "precision", "recall", "F1"], rows);
}

function drawWeights(canvas, strategies) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const withWeights = strategies.filter((s) => s.weights);
  if (withWeights.length === 0) return;
  const members = withWeights[0].members;
  const colors = ["#2166ac", "#d6604d", "#4d9221", "#8073ac", "#e08214", "#35978f", "#c51b7d", "#762a83"];
  const label = 190;
  const barH = (canvas.height - 30) / withWeights.length;
  ctx.font = "12px system-ui";
  ctx.textBaseline = "middle";
  withWeights.forEach((s, r) => {
    let x = label;
    ctx.fillStyle = "#222";
    ctx.fillText(s.strategy, 4, 10 + barH * (r + 0.5));
    s.weights.forEach((w, m) => {
      const width = w * (canvas.width - label - 10);
      ctx.fillStyle = colors[m % colors.length];
      ctx.fillRect(x, 10 + barH * r + 3, width, barH - 6);
      x += width;
    });
  });
  let x = label;
  members.forEach((name, m) => {
    ctx.fillStyle = colors[m % colors.length];
    ctx.fillRect(x, canvas.height - 14, 10, 10);
    ctx.fillStyle = "#222";
    const text = name.replace(/^essay:/, "");
    ctx.fillText(text, x + 14, canvas.height - 9);
    x += 24 + ctx.measureText(text).width;
  });
}

function updateBlend() {
  const params = JSON.stringify({
    elite_threshold: Number($("elite").value),
    confidence_threshold: Number($("conf").value),
  });
  const out = JSON.parse(blend($("members").value, params));
  if (out.error) {
    $("blend-out").innerHTML = `<p class="err">${out.error}</p>`;
    drawWeights($("weights"), []);
    return;
  }
  const rows = out.strategies.map((s) =>
    s.error ? [s.strategy, `<span class="err">${s.error}</span>`, ""] : [s.strategy, fmt(s.blend), s.final],
  );
  $("blend-out").innerHTML = table(["strategy", "blend", "final"], rows);
  drawWeights($("weights"), out.strategies);
}

function updateCurves() {
  const out = JSON.parse(curves(Number($("tlow").value), Number($("thigh").value), Number($("tdelta").value), 801));
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  $("curve-err").textContent = out.error || "";
  if (out.error) return;
  const pad = 32;
  const X = (p) => pad + (p / 4) * (canvas.width - 2 * pad);
  const Y = (v) => canvas.height - pad - (v / 4) * (canvas.height - 2 * pad);
  const Yc = (c) => canvas.height - pad - c * (canvas.height - 2 * pad);
  ctx.strokeStyle = "#ccc";
  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  for (let s = 0; s <= 4; s++) {
    ctx.beginPath();
    ctx.moveTo(X(s), pad);
    ctx.lineTo(X(s), canvas.height - pad);
    ctx.stroke();
    ctx.fillText(String(s), X(s) - 3, canvas.height - pad + 14);
  }
  const line = (color, f, dash = []) => {
    ctx.strokeStyle = color;
    ctx.setLineDash(dash);
    ctx.lineWidth = 2;
    ctx.beginPath();
    out.points.forEach((pt, i) => (i ? ctx.lineTo(X(pt.p), f(pt)) : ctx.moveTo(X(pt.p), f(pt))));
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.lineWidth = 1;
  };
  line("#aaa", (pt) => Y(pt.final));
  line("#e08214", (pt) => Y(pt.tiered));
  line("#2166ac", (pt) => Yc(pt.confidence));
  ctx.strokeStyle = "#2166ac";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(pad, Yc(out.confidence_threshold));
  ctx.lineTo(canvas.width - pad, Yc(out.confidence_threshold));
  ctx.stroke();
  ctx.setLineDash([]);
}

await init();
for (const id of ["truth", "pred"]) $(id).addEventListener("input", updateAgreement);
for (const id of ["members", "elite", "conf"]) $(id).addEventListener("input", updateBlend);
for (const id of ["tlow", "thigh", "tdelta"]) $(id).addEventListener("input", updateCurves);
updateAgreement();
updateBlend();
updateCurves();
