import init, { Phantom, cycle_plan, budget } from "./pkg/mccan_demo.js";

const $ = (id) => document.getElementById(id);
const SCALE = 4;
let phantom = null;

// Window 900..1500 mapped to grey.
function draw(canvas, px, side) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(side, side);
  for (let i = 0; i < px.length; i++) {
    const g = Math.max(0, Math.min(255, ((px[i] - 900) / 600) * 255));
    img.data.set([g, g, g, 255], i * 4);
  }
  const tmp = new OffscreenCanvas(side, side);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, side * SCALE, side * SCALE);
}

function outline(canvas, rois, color) {
  const ctx = canvas.getContext("2d");
  ctx.strokeStyle = color;
  for (const r of rois) ctx.strokeRect(r.x * SCALE + 0.5, r.y * SCALE + 0.5, r.width * SCALE - 1, r.height * SCALE - 1);
}

function roiTable(name, rows) {
  const body = rows
    .map((r) => `<tr><td>${r.roi_id}</td><td>${r.mean.toFixed(1)}</td><td>${r.true_mean}</td><td>${r.sd.toFixed(2)}</td><td>${r.true_sd}</td></tr>`)
    .join("");
  return `<table><caption>${name}</caption><tr><th>ROI</th><th>mean</th><th>true</th><th>SD</th><th>noise SD</th></tr>${body}</table>`;
}

function attachMeasure(canvas, domain, name) {
  let start = null;
  canvas.onmousedown = (e) => (start = [e.offsetX, e.offsetY]);
  canvas.onmouseup = (e) => {
    if (!start) return;
    const x0 = Math.floor(Math.min(start[0], e.offsetX) / SCALE);
    const y0 = Math.floor(Math.min(start[1], e.offsetY) / SCALE);
    const w = Math.max(1, Math.floor(Math.abs(e.offsetX - start[0]) / SCALE));
    const h = Math.max(1, Math.floor(Math.abs(e.offsetY - start[1]) / SCALE));
    start = null;
    try {
      const [mean, sd] = phantom.stats(domain, x0, y0, w, h);
      $("measure").textContent = `${name} [${x0},${y0} ${w}x${h}]: mean ${mean.toFixed(1)}, SD ${sd.toFixed(2)}`;
    } catch (err) {
      $("measure").textContent = err.message;
    }
  };
}

function synth() {
  $("synth-err").textContent = "";
  const sigmas = new Float64Array($("sigmas").value.split(",").map(Number));
  try {
    phantom?.free();
    phantom = new Phantom(Number($("side").value), sigmas, Number($("seed").value));
  } catch (err) {
    $("synth-err").textContent = err.message;
    return;
  }
  const side = phantom.side();
  $("images").innerHTML = "";
  $("rois").innerHTML = "";
  phantom.domain_names().forEach((name, d) => {
    const c = document.createElement("canvas");
    c.width = c.height = side * SCALE;
    c.title = name;
    $("images").append(c);
    draw(c, phantom.pixels(d), side);
    const rows = JSON.parse(phantom.roi_report(d));
    outline(c, rows, "#e33");
    attachMeasure(c, d, name);
    $("rois").insertAdjacentHTML("beforeend", roiTable(name, rows));
  });
}

function plan() {
  try {
    const p = JSON.parse(cycle_plan(Number($("n").value), $("mode").value));
    const cycles = p.cycles.map((c) => `  ${c.kind.padEnd(6)} ${c.steps}`).join("\n");
    const discs = p.discriminators.map((d, i) => `  D${i} on ${d.domain}#${d.replica}: ${d.paths.join("  ")}`).join("\n");
    $("plan-out").textContent = `${p.cycles.length} cycles\n${cycles}\n${p.discriminators.length} discriminators\n${discs}`;
  } catch (err) {
    $("plan-out").textContent = err.message;
  }
}

function count() {
  try {
    const res = Number($("res").value);
    $("budget-out").textContent = budget("ccadn", 2, res) + "\n" + budget($("mode").value, Number($("n").value), res);
  } catch (err) {
    $("budget-out").textContent = err.message;
  }
}

await init();
$("synth").onclick = synth;
$("plan").onclick = plan;
$("budget").onclick = count;
synth();
plan();
count();
