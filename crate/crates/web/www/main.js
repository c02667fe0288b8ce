// Build with: wasm-pack build crates/web --target web --out-dir www/pkg
import init, { gaugePair, potentialSlice, cantorDimension } from "./pkg/carnot_web.js";

const $ = (id) => document.getElementById(id);
const nums = (s) => s.split(/[\s,]+/).filter(Boolean).map(Number);

function guard(out, f) {
  try {
    f();
  } catch (e) {
    out.textContent = `error: ${e.message ?? e}`;
  }
}

function drawSlice() {
  const out = $("slice-out");
  guard(out, () => {
    const canvas = $("slice");
    const n = canvas.width;
    const vals = potentialSlice(new Float64Array(nums($("atoms").value)), +$("t0").value, +$("extent").value, n);
    // log scale, clipped at the 2nd and 98th percentiles
    const logs = Array.from(vals, (v) => Math.log(Math.max(v, 1e-300)));
    const sorted = logs.filter(Number.isFinite).sort((a, b) => a - b);
    const lo = sorted[Math.floor(0.02 * sorted.length)];
    const hi = sorted[Math.floor(0.98 * (sorted.length - 1))];
    const ctx = canvas.getContext("2d");
    const img = ctx.createImageData(n, n);
    for (let k = 0; k < n * n; k++) {
      const u = Number.isFinite(logs[k]) ? Math.min(1, Math.max(0, (logs[k] - lo) / (hi - lo || 1))) : 1;
      // row 0 is y = -extent; draw it at the bottom
      const row = n - 1 - Math.floor(k / n);
      const i = 4 * (row * n + (k % n));
      img.data[i] = 255 * u;
      img.data[i + 1] = 80 + 120 * u * (1 - u);
      img.data[i + 2] = 255 * (1 - u);
      img.data[i + 3] = 255;
    }
    ctx.putImageData(img, 0, 0);
    out.textContent = `log R from ${lo.toFixed(3)} to ${hi.toFixed(3)}`;
  });
}

await init();

$("gauge-go").onclick = () =>
  guard($("gauge-out"), () => {
    const [d, g] = gaugePair(new Float64Array(nums($("p").value)), new Float64Array(nums($("q").value)));
    $("gauge-out").textContent = `d(p⁻¹q) = ${d.toPrecision(10)}\nΓ(p⁻¹q) = ${g.toPrecision(10)}`;
  });

$("slice-go").onclick = drawSlice;

$("dim-go").onclick = () =>
  guard($("dim-out"), () => {
    const [moran, slope, ci] = cantorDimension(+$("ratio").value, +$("npts").value, +$("seed").value);
    $("dim-out").textContent = `similarity dimension ${moran.toFixed(4)}\nbox counting        ${slope.toFixed(4)} ± ${ci.toFixed(4)}`;
  });

drawSlice();
