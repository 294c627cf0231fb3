import init, { gpCurve, World } from "./pkg/dfilter_web.js";

const ATTRS = ["spec", "rept", "rel", "cont", "coh", "flu", "cons"];
const CLASSES = ["clean", "shuffle", "generic", "repeat"];
const $ = (id) => document.getElementById(id);

let world = null;
const points = [];

function drawGp() {
  const c = $("gp");
  const g = c.getContext("2d");
  const W = c.width, H = c.height;
  const sx = (x) => ((x + 1) / 2) * W;
  const sy = (y) => H - ((y + 2) / 4) * H;
  g.clearRect(0, 0, W, H);
  $("gp-next").textContent = "";
  if (points.length > 0) {
    const n = 181;
    let curve;
    try {
      curve = gpCurve(points.map((p) => p[0]), points.map((p) => p[1]), Number($("ls").value), n);
    } catch (e) {
      $("gp-next").textContent = String(e);
      return;
    }
    const x = curve.slice(0, n), m = curve.slice(n, 2 * n), s = curve.slice(2 * n, 3 * n), ei = curve.slice(3 * n);
    g.fillStyle = "rgba(70,110,200,0.15)";
    g.beginPath();
    x.forEach((xi, i) => g.lineTo(sx(xi), sy(m[i] + 2 * s[i])));
    for (let i = n - 1; i >= 0; i--) g.lineTo(sx(x[i]), sy(m[i] - 2 * s[i]));
    g.fill();
    g.strokeStyle = "#36c";
    g.beginPath();
    x.forEach((xi, i) => g.lineTo(sx(xi), sy(m[i])));
    g.stroke();
    const top = Math.max(...ei, 1e-12);
    g.strokeStyle = "#4a7";
    g.beginPath();
    x.forEach((xi, i) => g.lineTo(sx(xi), H - (ei[i] / top) * H * 0.25));
    g.stroke();
    const best = ei.indexOf(top);
    $("gp-next").textContent = `next proposal x = ${x[best].toFixed(3)}`;
  }
  g.fillStyle = "#c33";
  for (const [x, y] of points) {
    g.beginPath();
    g.arc(sx(x), sy(y), 4, 0, 2 * Math.PI);
    g.fill();
  }
}

function buildWorld() {
  const info = $("world-info");
  try {
    world = new World(BigInt($("seed").value), Number($("n").value),
      Number($("rs").value), Number($("rg").value), Number($("rr").value));
    info.textContent = `${world.len()} samples scored.`;
    pickSample();
    updateFilter();
  } catch (e) {
    info.textContent = String(e);
  }
}

function pickSample() {
  if (!world) return;
  const i = Math.floor(Math.random() * world.len());
  $("ctx").value = world.context(i).replaceAll(" / ", " ");
  $("resp").value = world.response(i);
  $("pick-label").textContent = `sample ${i}: ${world.label(i)}`;
  scorePair();
}

function scorePair() {
  const t = $("scores");
  if (!world) return;
  try {
    const v = world.scorePair($("ctx").value, $("resp").value);
    t.innerHTML = "<tr><th></th>" + ATTRS.map((a) => `<th>${a}</th>`).join("") + "</tr>" +
      "<tr><td>raw</td>" + v.slice(0, 7).map((x) => `<td>${x.toFixed(3)}</td>`).join("") + "</tr>" +
      "<tr><td>standardized</td>" + v.slice(7).map((x) => `<td>${x.toFixed(2)}</td>`).join("") + "</tr>";
  } catch (e) {
    t.innerHTML = `<tr><td>${e}</td></tr>`;
  }
}

function updateFilter() {
  $("ratiov").textContent = $("ratio").value;
  if (!world) return;
  const w = ATTRS.map((a) => Number($(`w-${a}`).value));
  ATTRS.forEach((a, i) => ($(`w-${a}-v`).textContent = w[i].toFixed(2)));
  try {
    const share = world.removedShare(new Float64Array(w), Number($("ratio").value));
    $("removed").innerHTML = "<tr><th>class</th><th>removed</th><th></th></tr>" +
      CLASSES.map((c, i) => `<tr><td>${c}</td><td>${(100 * share[i]).toFixed(1)}%</td>` +
        `<td><span class="bar" style="width:${(200 * share[i]).toFixed(0)}px"></span></td></tr>`).join("");
  } catch (e) {
    $("removed").innerHTML = `<tr><td>${e}</td></tr>`;
  }
}

async function main() {
  await init();
  $("status").textContent = "";
  $("gp").addEventListener("click", (ev) => {
    const r = ev.target.getBoundingClientRect();
    const x = ((ev.clientX - r.left) / r.width) * 2 - 1;
    const y = (1 - (ev.clientY - r.top) / r.height) * 4 - 2;
    points.push([x, y]);
    drawGp();
  });
  $("ls").addEventListener("input", () => {
    $("lsv").textContent = $("ls").value;
    drawGp();
  });
  $("gp-clear").addEventListener("click", () => {
    points.length = 0;
    drawGp();
  });

  $("weights").innerHTML = ATTRS.map((a) =>
    `<div><label>${a}</label> <input id="w-${a}" type="range" min="-1" max="1" step="0.05" ` +
    `value="${a === "rel" ? 1 : 0}"> <span id="w-${a}-v"></span></div>`).join("");
  ATTRS.forEach((a) => $(`w-${a}`).addEventListener("input", updateFilter));
  $("ratio").addEventListener("input", updateFilter);
  $("build").addEventListener("click", buildWorld);
  $("score").addEventListener("click", scorePair);
  $("pick").addEventListener("click", pickSample);

  drawGp();
  buildWorld();
}

main();
