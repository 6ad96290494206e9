import init, { Demo, parse_chat } from "./pkg/arsls_web.js";

const VIEWERS = ["Ann", "Bo", "Cy", "Dee", "Eli"];
const TICK_MS = 1000 / 30;

await init();
const demo = new Demo(BigInt(Date.now() % 100000));
const canvas = document.getElementById("view");
canvas.width = demo.width();
canvas.height = demo.height();
const ctx = canvas.getContext("2d");
const image = ctx.createImageData(canvas.width, canvas.height);

const who = document.getElementById("who");
for (const name of VIEWERS) who.add(new Option(name, name.toLowerCase()));
const viewer = () => [who.value, who.selectedOptions[0].text];

const text = document.getElementById("text");
text.addEventListener("input", () => {
  document.getElementById("parsed").textContent = text.value ? parse_chat(text.value) : "";
});
document.getElementById("chat").addEventListener("submit", (e) => {
  e.preventDefault();
  if (!text.value.trim()) return;
  demo.chat(...viewer(), text.value);
  text.value = "";
  document.getElementById("parsed").textContent = "";
});
for (const b of document.querySelectorAll("[data-gift]")) {
  b.addEventListener("click", () => demo.gift(...viewer(), b.dataset.gift));
}

let paused = false;
document.getElementById("pause").addEventListener("click", (e) => {
  paused = !paused;
  e.target.textContent = paused ? "Resume" : "Pause";
});

const log = document.getElementById("log");
function showEffects() {
  const effects = JSON.parse(demo.take_effects()).filter((e) => e.kind !== "ripple");
  for (const e of effects) {
    const { tick, kind, ...rest } = e;
    log.textContent += `${tick} ${kind} ${JSON.stringify(rest)}\n`;
  }
  if (effects.length) log.scrollTop = log.scrollHeight;
}

function showBoard() {
  const b = JSON.parse(demo.board());
  const el = document.getElementById("board");
  if (!b) {
    el.textContent = "no round";
    return;
  }
  const [n, of] = b.progress;
  const outcome = typeof b.outcome === "string" ? b.outcome : Object.keys(b.outcome)[0];
  el.innerHTML = "";
  el.append(`${b.keyword_or_theme}  ${n}/${of}  combo ${b.combo}  ${Math.ceil(b.countdown_ms / 1000)}s  ${outcome}`);
  for (const line of b.last_nine) el.append(document.createElement("br"), line);
}

let last = performance.now();
let owed = 0;
function frame(now) {
  if (!paused && !demo.finished()) {
    owed += now - last;
    const ticks = Math.min(Math.floor(owed / TICK_MS), 30);
    if (ticks > 0) {
      owed -= ticks * TICK_MS;
      demo.step(ticks);
      image.data.set(demo.render());
      ctx.putImageData(image, 0, 0);
      showEffects();
      showBoard();
      document.getElementById("clock").textContent = `tick ${demo.tick()}`;
    }
  } else {
    owed = 0;
  }
  last = now;
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
