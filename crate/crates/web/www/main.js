import init, { DemoScene } from "./pkg/scanwheel_web.js";

const $ = (id) => document.getElementById(id);
let scene = null;

function paint(canvas, rgba, rows, cols) {
  canvas.width = cols;
  canvas.height = rows;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), cols, rows), 0, 0);
  return ctx;
}

function outline(ctx, pixelSets, colour) {
  ctx.fillStyle = colour;
  for (const set of pixelSets) {
    const inSet = new Set(set.map(([r, c]) => r * 100000 + c));
    for (const [r, c] of set) {
      // draw only pixels on the set's edge
      const edge = [[1, 0], [-1, 0], [0, 1], [0, -1]].some(([dr, dc]) => !inSet.has((r + dr) * 100000 + c + dc));
      if (edge) ctx.fillRect(c, r, 1, 1);
    }
  }
}

function redraw(detected = []) {
  const ctx = paint($("scene"), scene.rgba(), scene.rows(), scene.cols());
  outline(ctx, JSON.parse(scene.planted()), "#ff00ff");
  outline(ctx, detected, "#ffd000");
}

function timed(label, f) {
  const t0 = performance.now();
  const v = f();
  return [v, `${label}: ${(performance.now() - t0).toFixed(0)} ms`];
}

function show(header, json) {
  $("out").textContent = header + "\n" + JSON.stringify(json, (k, v) => (k === "pixels" ? `${v.length} px` : v), 2);
}

function guard(f) {
  return () => {
    try { f(); } catch (e) { $("out").textContent = "error: " + e; }
  };
}

$("make").onclick = guard(() => {
  const n = Number($("size").value);
  if (scene) scene.free();
  const [s, msg] = timed("generated", () => new DemoScene(n, n, $("layout").value, Number($("sigma").value), Number($("seed").value)));
  scene = s;
  redraw();
  paint($("classes"), new Uint8Array(n * n * 4), n, n);
  $("coverage").innerHTML = "";
  $("out").textContent = msg;
});

$("rpf").onclick = guard(() => {
  const [text, msg] = timed("rare pixel finder", () => scene.rare_pixels(Number($("k1").value)));
  const v = JSON.parse(text);
  redraw(v.objects.map((o) => o.pixels));
  show(msg, v);
});

$("blobs").onclick = guard(() => {
  const [text, msg] = timed("spectral blobs", () => scene.blobs(Number($("quantile").value), Number($("maxsize").value)));
  const v = JSON.parse(text);
  redraw(v.anomalies.map((a) => a.pixels));
  show(msg, v);
});

$("classify").onclick = guard(() => {
  const [res, msg] = timed("land cover", () => scene.land_cover());
  paint($("classes"), res.rgba(), scene.rows(), scene.cols());
  const v = JSON.parse(res.summary());
  res.free();
  const rows = v.coverage
    .map((c) => `<tr><th>${c.class}</th><td>${(100 * c.classified).toFixed(1)}%</td><td>${(100 * c.truth).toFixed(1)}%</td></tr>`)
    .join("");
  $("coverage").innerHTML = `<table><tr><th></th><th>classified</th><th>truth</th></tr>${rows}</table>`;
  $("out").textContent = msg;
});

await init();
$("make").click();
