import { ServiceClient } from "./api.js";
import { SessionClient } from "./session.js";
import { classColor, describeMode, drawScatter, formatGauges } from "./render.js";

const api = new ServiceClient("");
const $ = (id: string) => document.getElementById(id)!;

const canvas = $("scatter") as HTMLCanvasElement;
const labelRow = $("label-buttons");
const banner = $("banner");
const outcome = $("outcome");
const bundleSelect = $("bundle-select") as HTMLSelectElement;

const client = new SessionClient(api, render);

function render(): void {
  const s = client.state;
  const g = formatGauges(s);
  $("gauge-accuracy").textContent = g.accuracy;
  $("gauge-cost").textContent = g.cost;
  $("gauge-progress").textContent = g.progress;

  drawScatter(canvas, s);

  if (s.error) {
    banner.textContent = `⚠ ${s.error}`;
  } else if (s.phase === "idle") {
    banner.textContent = "Pick an operating point (λ bundle) and start a session.";
  } else if (s.phase === "done") {
    banner.textContent = "Session complete.";
  } else if (s.phase === "pending" && s.current) {
    const hint = s.current.aiHint !== null ? ` · AI suggests class ${s.current.aiHint}` : "";
    banner.textContent = `${describeMode(s.current.mode)}${hint} — your label?`;
  } else if (s.lastOutcome) {
    const o = s.lastOutcome;
    banner.textContent = `${describeMode(o.mode)} → predicted ${o.prediction}`;
  } else {
    banner.textContent = "…";
  }

  if (s.lastOutcome) {
    const o = s.lastOutcome;
    outcome.textContent =
      o.true_label === null
        ? `sample ${o.sampleId}: predicted ${o.prediction}`
        : `sample ${o.sampleId}: predicted ${o.prediction}, truth ${o.true_label} ${o.correct ? "✓" : "✗"}`;
    outcome.className = o.correct ? "ok" : "bad";
  } else {
    outcome.textContent = "";
  }

  // label buttons exist only while a request is pending
  labelRow.querySelectorAll("button").forEach((b, i) => {
    (b as HTMLButtonElement).disabled = !client.canSubmit;
    (b as HTMLButtonElement).style.borderColor = classColor(i);
  });
}

function buildLabelButtons(numClasses: number): void {
  labelRow.innerHTML = "";
  for (let c = 0; c < numClasses; c++) {
    const btn = document.createElement("button");
    btn.textContent = `class ${c}`;
    btn.disabled = true;
    btn.addEventListener("click", async () => {
      await client.submit(c);
      await client.advance();
    });
    labelRow.appendChild(btn);
  }
}

async function startSession(): Promise<void> {
  const bundle = bundleSelect.value;
  if (!bundle) return;
  if (client.active && !confirm("Switching bundles abandons the current session. Continue?")) {
    bundleSelect.value = client.state.bundle ?? "";
    return;
  }
  await client.start(bundle, {});
  buildLabelButtons(client.state.numClasses);
  await client.advance();
}

async function init(): Promise<void> {
  const bundles = await api.listBundles();
  bundleSelect.innerHTML = "";
  for (const b of bundles) {
    const opt = document.createElement("option");
    opt.value = b.id;
    opt.textContent = b.lambda !== null ? `${b.id} (λ=${b.lambda})` : b.id;
    bundleSelect.appendChild(opt);
  }
  $("start-btn").addEventListener("click", () => void startSession());
  bundleSelect.addEventListener("change", () => {
    if (client.active) void startSession();
  });
  render();
}

void init();
