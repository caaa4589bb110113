import type { ViewState } from "./session.js";

const PALETTE = ["#4c78a8", "#f58518", "#54a24b", "#e45756", "#b279a2", "#9d755d"];

export function classColor(label: number): string {
  return PALETTE[label % PALETTE.length];
}

/** Scatter of the projected training subset with the query point ringed. */
export function drawScatter(canvas: HTMLCanvasElement, state: ViewState): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const pts = state.background;
  if (!pts.length) return;
  const xs = pts.map((p) => p.x);
  const ys = pts.map((p) => p.y);
  let xmin = Math.min(...xs);
  let xmax = Math.max(...xs);
  let ymin = Math.min(...ys);
  let ymax = Math.max(...ys);
  const q = state.current?.point ?? null;
  if (q) {
    xmin = Math.min(xmin, q.x);
    xmax = Math.max(xmax, q.x);
    ymin = Math.min(ymin, q.y);
    ymax = Math.max(ymax, q.y);
  }
  const pad = 14;
  const sx = (x: number) => pad + ((x - xmin) / (xmax - xmin || 1)) * (canvas.width - 2 * pad);
  const sy = (y: number) => canvas.height - pad - ((y - ymin) / (ymax - ymin || 1)) * (canvas.height - 2 * pad);

  for (const p of pts) {
    ctx.fillStyle = classColor(p.label);
    ctx.globalAlpha = 0.45;
    ctx.beginPath();
    ctx.arc(sx(p.x), sy(p.y), 3, 0, Math.PI * 2);
    ctx.fill();
  }
  ctx.globalAlpha = 1;
  if (q) {
    ctx.strokeStyle = "#111";
    ctx.lineWidth = 2.5;
    ctx.beginPath();
    ctx.arc(sx(q.x), sy(q.y), 8, 0, Math.PI * 2);
    ctx.stroke();
    ctx.fillStyle = "#111";
    ctx.beginPath();
    ctx.arc(sx(q.x), sy(q.y), 3.5, 0, Math.PI * 2);
    ctx.fill();
  }
}

export function describeMode(mode: string): string {
  if (mode === "ai_alone") return "AI decided alone";
  const k = mode.split("_")[1];
  if (mode.startsWith("complement")) return `AI + ${k} user${k === "1" ? "" : "s"} — your label joins the AI's`;
  return `Deferred to ${k} user${k === "1" ? "" : "s"} — the AI's opinion is hidden`;
}

export function formatGauges(state: ViewState): { accuracy: string; cost: string; progress: string } {
  const g = state.gauges;
  if (!g) return { accuracy: "–", cost: "–", progress: "–" };
  return {
    accuracy: g.n ? `${(g.accuracy * 100).toFixed(1)}% (${g.correct}/${g.n})` : "–",
    cost: `${g.cost} labels (${g.cost_per_sample.toFixed(2)}/sample)`,
    progress: `${g.n} done, ${g.remaining} left`,
  };
}
