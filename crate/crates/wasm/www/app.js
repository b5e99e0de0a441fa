import init, { Demo } from "./pkg/trafficlab_wasm.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

let demo = null;
let segments = [];
let selected = 0;
let runs = [];
let toCanvas = null;

function status(text) {
  $("status").textContent = text;
}

function guard(f) {
  try {
    f();
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
}

// Shift each directed segment to its right so both directions stay visible.
function shifted(s, px) {
  const [a, b] = [toCanvas(s.from), toCanvas(s.to)];
  const dx = b[0] - a[0], dy = b[1] - a[1];
  const n = Math.hypot(dx, dy) || 1;
  const ox = (-dy / n) * px, oy = (dx / n) * px;
  return [[a[0] + ox, a[1] + oy], [b[0] + ox, b[1] + oy]];
}

function drawMap() {
  const c = $("map"), g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const xs = segments.flatMap((s) => [s.from[0], s.to[0]]);
  const ys = segments.flatMap((s) => [s.from[1], s.to[1]]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const k = (c.width - 40) / Math.max(x1 - x0, y1 - y0, 1);
  toCanvas = ([x, y]) => [20 + (x - x0) * k, c.height - 20 - (y - y0) * k];
  for (const s of segments) {
    const [a, b] = shifted(s, 4);
    g.strokeStyle = s.id === selected ? "#000" : COLORS[s.region % COLORS.length];
    g.lineWidth = s.id === selected ? 4 : 2;
    g.beginPath();
    g.moveTo(...a);
    g.lineTo(...b);
    g.stroke();
    const f = s.detector_offset / s.length;
    g.fillStyle = "#333";
    g.fillRect(a[0] + (b[0] - a[0]) * f - 2, a[1] + (b[1] - a[1]) * f - 2, 4, 4);
  }
}

function axes(g, c, xmax, ymax, xlabel, ylabel) {
  g.strokeStyle = "#888";
  g.lineWidth = 1;
  g.beginPath();
  g.moveTo(40, 10);
  g.lineTo(40, c.height - 30);
  g.lineTo(c.width - 10, c.height - 30);
  g.stroke();
  g.fillStyle = "#333";
  g.fillText(xlabel, c.width - 140, c.height - 10);
  g.fillText(`${xmax.toPrecision(3)}`, c.width - 40, c.height - 18);
  g.fillText(ylabel, 45, 20);
  g.fillText(`${ymax.toPrecision(3)}`, 2, 14);
  return (x, y) => [40 + (x / xmax) * (c.width - 50), c.height - 30 - (y / ymax) * (c.height - 40)];
}

function drawMfd() {
  const c = $("mfd"), g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const pts = runs.flatMap((r) => r.points.filter((p) => p.k > 0));
  if (!pts.length) return;
  const kmax = Math.max(...pts.map((p) => p.k)) * 1.05;
  const qmax = Math.max(...pts.map((p) => p.q)) * 1.05;
  const at = axes(g, c, kmax, qmax, "density (veh/m)", "flow (veh/s)");
  runs.forEach((r, i) => {
    g.strokeStyle = COLORS[i % COLORS.length];
    g.beginPath();
    r.points.filter((p) => p.k > 0).forEach((p, j) => (j ? g.lineTo(...at(p.k, p.q)) : g.moveTo(...at(p.k, p.q))));
    g.stroke();
    g.fillStyle = g.strokeStyle;
    g.fillText(`x${r.scale.toFixed(1)}`, c.width - 50, 20 + 14 * i);
  });
}

function drawSpeeds() {
  const c = $("speeds"), g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  if (!runs.length) return;
  const bins = JSON.parse(demo.speeds(selected));
  const tmax = bins.length * 180;
  const at = axes(g, c, tmax, 16, "time (s)", `segment ${selected} speed (m/s)`);
  const line = (key, color) => {
    g.strokeStyle = color;
    g.lineWidth = 2;
    g.beginPath();
    let pen = false;
    for (const b of bins) {
      if (b[key] == null) {
        pen = false;
        continue;
      }
      const p = at(b.t0 + 90, b[key]);
      pen ? g.lineTo(...p) : g.moveTo(...p);
      pen = true;
    }
    g.stroke();
  };
  line("segment", "#1f77b4");
  line("point", "#d62728");
  g.fillStyle = "#1f77b4";
  g.fillText("segment (space mean)", c.width - 160, 20);
  g.fillStyle = "#d62728";
  g.fillText("detector (time mean)", c.width - 160, 34);
}

function build() {
  guard(() => {
    demo?.free();
    demo = new Demo(+$("rows").value, +$("cols").value, +$("demand").value, BigInt($("seed").value));
    segments = JSON.parse(demo.network());
    selected = Math.min(selected, segments.length - 1);
    runs = [];
    drawMap();
    drawMfd();
    drawSpeeds();
    status(`${segments.length} segments; simulate a session`);
  });
}

function simulate() {
  guard(() => {
    const t = performance.now();
    const r = JSON.parse(demo.simulate(+$("scale").value, BigInt($("sseed").value)));
    runs.push(r);
    drawMfd();
    drawSpeeds();
    const s = r.summary;
    status(
      `x${r.scale}: ${r.vehicles} vehicles, max density ${s.max_density.toFixed(4)} veh/m, ` +
        `min speed ${s.min_speed?.toFixed(2) ?? "n/a"} m/s (${(performance.now() - t).toFixed(0)} ms)`,
    );
  });
}

function pick(ev) {
  const rect = $("map").getBoundingClientRect();
  const [x, y] = [ev.clientX - rect.left, ev.clientY - rect.top];
  let best = [Infinity, selected];
  for (const s of segments) {
    const [a, b] = shifted(s, 4);
    const dx = b[0] - a[0], dy = b[1] - a[1];
    const u = Math.max(0, Math.min(1, ((x - a[0]) * dx + (y - a[1]) * dy) / (dx * dx + dy * dy || 1)));
    const d = Math.hypot(a[0] + u * dx - x, a[1] + u * dy - y);
    if (d < best[0]) best = [d, s.id];
  }
  selected = best[1];
  drawMap();
  guard(drawSpeeds);
}

await init();
$("build").onclick = build;
$("run").onclick = simulate;
$("map").onclick = pick;
$("scale").oninput = () => ($("scale-val").textContent = $("scale").value);
build();
