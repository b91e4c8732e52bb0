import init, { synthetic, shuffle_view, splice_preview } from "./pkg/shufflemark_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const size = () => num("img-size");

function paint(id, rgba, n) {
  const canvas = $(id);
  canvas.width = n;
  canvas.height = n;
  const data = new ImageData(new Uint8ClampedArray(rgba), n, n);
  canvas.getContext("2d").putImageData(data, 0, 0);
}

function image() {
  return synthetic(num("img-seed"), size(), num("img-shapes"));
}

function refreshShuffle() {
  const n = size();
  const img = image();
  paint("c-image", img, n);
  try {
    const v = shuffle_view(img, n, n, num("sh-seed"), num("sh-patch"));
    paint("c-shuffled", v.shuffled, n);
    paint("c-spec", v.spectrum, n);
    paint("c-shspec", v.shuffled_spectrum, n);
    $("cap-spec").textContent = `spectrum, HF ratio ${v.ratio.toFixed(4)}`;
    $("cap-shspec").textContent = `shuffled spectrum, HF ratio ${v.shuffled_ratio.toFixed(4)}`;
    v.free();
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = e.message;
  }
}

function refreshSplice() {
  const n = size();
  const donor = synthetic(num("img-seed") + 1, n, num("img-shapes"));
  try {
    const p = splice_preview(image(), donor, n, num("mk-seed"), $("mk-strategy").value);
    paint("c-mask", p.mask, n);
    paint("c-spliced", p.spliced, n);
    $("cap-mask").textContent = `mask, ${p.shapes}, ${(100 * p.coverage).toFixed(1)}% covered`;
    p.free();
  } catch (e) {
    $("status").textContent = e.message;
  }
}

function refresh() {
  refreshShuffle();
  refreshSplice();
}

await init();
for (const id of ["img-seed", "img-shapes", "img-size", "sh-seed", "sh-patch", "mk-seed", "mk-strategy"]) {
  $(id).addEventListener("change", refresh);
}
$("img-new").addEventListener("click", () => {
  $("img-seed").value = num("img-seed") + 1;
  refresh();
});
refresh();
