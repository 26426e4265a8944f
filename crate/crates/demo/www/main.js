import init, { density_comparison, diversity_comparison, enrichment_walk } from "./pkg/wds_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function report(id, fn) {
  const el = $(id);
  el.classList.remove("err");
  try {
    el.textContent = fn();
  } catch (e) {
    el.classList.add("err");
    el.textContent = String(e.message ?? e);
  }
}

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
}

function densities() {
  const t0 = performance.now();
  const v = density_comparison(num("d-n"), num("d-k"), num("d-r"), num("d-b"), num("d-s"));
  const ms = performance.now() - t0;
  const c = $("d-plot"), ctx = c.getContext("2d"), pad = 30;
  axes(ctx, c.width, c.height, pad);
  let max = 0;
  for (const x of v) max = Math.max(max, x);
  const sx = (x) => pad + (x / max) * (c.width - 2 * pad);
  const sy = (y) => c.height - pad - (y / max) * (c.height - 2 * pad);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.moveTo(sx(0), sy(0));
  ctx.lineTo(sx(max), sy(max));
  ctx.stroke();
  ctx.fillStyle = "#2060c0";
  let err = 0;
  for (let i = 0; i < v.length; i += 2) {
    ctx.fillRect(sx(v[i]) - 1.5, sy(v[i + 1]) - 1.5, 3, 3);
    err += Math.abs(v[i + 1] - v[i]) / v[i];
  }
  ctx.fillStyle = "#444";
  ctx.fillText("exact", c.width - pad - 30, c.height - 8);
  ctx.fillText("sketch", 2, pad - 8);
  return `${v.length / 2} cells, mean relative error ${((200 * err) / v.length).toFixed(2)}%, ${ms.toFixed(0)} ms`;
}

function diversity() {
  const trials = num("w-t");
  let wins = 0, sw = 0, su = 0, k = 0, nd = 0;
  for (let s = 0; s < trials; s++) {
    const [w, u, kk, d] = diversity_comparison(num("w-n"), num("w-f"), num("w-p"), s);
    if (w > u) wins++;
    sw += w;
    su += u;
    k = kk;
    nd = d;
  }
  return `sample size ${k} of ${num("w-n")}, ${nd} diverse cells in the population\n` +
    `mean diverse cells drawn: inverse density ${(sw / trials).toFixed(1)}, uniform ${(su / trials).toFixed(1)}\n` +
    `inverse density ahead in ${wins}/${trials} seeds`;
}

function walk() {
  const n = num("e-n");
  const hits = $("e-h").value.split(/[\s,]+/).filter((s) => s !== "").map(Number);
  if (hits.some((h) => !Number.isInteger(h) || h < 0)) throw new Error("hit positions must be non-negative integers");
  const v = enrichment_walk(n, new Uint32Array(hits));
  const es = v[v.length - 1];
  const c = $("e-plot"), ctx = c.getContext("2d"), pad = 20;
  axes(ctx, c.width, c.height, pad);
  const sx = (i) => pad + (i / n) * (c.width - 2 * pad);
  const sy = (y) => c.height / 2 - y * (c.height / 2 - pad);
  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  ctx.moveTo(pad, sy(0));
  ctx.lineTo(c.width - pad, sy(0));
  ctx.stroke();
  ctx.strokeStyle = "#c03020";
  ctx.beginPath();
  for (let i = 0; i <= n; i++) (i ? ctx.lineTo : ctx.moveTo).call(ctx, sx(i), sy(v[i]));
  ctx.stroke();
  return `ES = ${es}`;
}

await init();
$("d-go").onclick = () => report("d-out", densities);
$("w-go").onclick = () => report("w-out", diversity);
$("e-go").onclick = () => report("e-out", walk);
report("d-out", densities);
report("w-out", diversity);
report("e-out", walk);
