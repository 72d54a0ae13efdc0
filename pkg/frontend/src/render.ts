/** SVG rendering of learning curves: bold mean lines, translucent CI bands,
 *  dashed horizontal references for training-free baselines. */

import { CurveSeries, isReference } from "./curves.js";

export interface RenderOptions {
  width?: number;
  height?: number;
  title?: string;
}

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const MARGIN = { top: 42, right: 24, bottom: 46, left: 64 };

function fmt(x: number): string {
  return (Math.round(x * 100) / 100).toString();
}

function ticks(lo: number, hi: number, count: number): number[] {
  if (!Number.isFinite(lo) || !Number.isFinite(hi) || lo === hi) {
    return [lo];
  }
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const candidates = [step, 2 * step, 5 * step, 10 * step];
  const chosen = candidates.find((s) => span / s <= count) ?? 10 * step;
  const out: number[] = [];
  for (let v = Math.ceil(lo / chosen) * chosen; v <= hi + 1e-9; v += chosen) {
    out.push(Math.abs(v) < 1e-12 ? 0 : v);
  }
  return out;
}

/**
 * Render one panel: x = training iteration, y = discounted return.
 * Every non-reference series contributes one `<polygon class="band">` and one
 * bold `<path class="mean">`; whittle/oracle series appear as one dashed
 * `<path class="reference">` at their final evaluated mean.  Output is
 * deterministic for a fixed input.
 */
export function render(series: CurveSeries[], options: RenderOptions = {}): string {
  if (series.length === 0) {
    throw new Error("render needs at least one series");
  }
  const width = options.width ?? 720;
  const height = options.height ?? 480;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  const curves = series.filter((s) => !isReference(s));
  const references = series.filter(isReference);

  const xValues = curves.flatMap((s) => s.points.map((p) => p.iteration));
  const xLo = xValues.length ? Math.min(...xValues) : 0;
  const xHi = xValues.length ? Math.max(...xValues) : 1;
  const yValues = series.flatMap((s) =>
    isReference(s)
      ? [s.points[s.points.length - 1].mean]
      : s.points.flatMap((p) => [p.ciLow, p.ciHigh]),
  );
  let yLo = Math.min(...yValues);
  let yHi = Math.max(...yValues);
  if (yLo === yHi) {
    yLo -= 1;
    yHi += 1;
  }
  const pad = 0.05 * (yHi - yLo);
  yLo -= pad;
  yHi += pad;

  const sx = (v: number) => MARGIN.left + ((v - xLo) / (xHi - xLo || 1)) * plotW;
  const sy = (v: number) => MARGIN.top + (1 - (v - yLo) / (yHi - yLo)) * plotH;

  const title = options.title ?? series[0].environment;
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" font-family="sans-serif">`,
  );
  parts.push(`<title>${title}</title>`);
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  parts.push(
    `<text x="${width / 2}" y="24" text-anchor="middle" font-size="16" font-weight="bold">${title}</text>`,
  );

  // axes
  const axisY = MARGIN.top + plotH;
  parts.push(
    `<g class="axes" stroke="#333" fill="none">` +
      `<line x1="${MARGIN.left}" y1="${MARGIN.top}" x2="${MARGIN.left}" y2="${axisY}"/>` +
      `<line x1="${MARGIN.left}" y1="${axisY}" x2="${MARGIN.left + plotW}" y2="${axisY}"/>` +
      `</g>`,
  );
  for (const t of ticks(xLo, xHi, 6)) {
    parts.push(
      `<text class="xtick" x="${fmt(sx(t))}" y="${axisY + 18}" text-anchor="middle" font-size="11">${t}</text>`,
    );
  }
  for (const t of ticks(yLo, yHi, 6)) {
    parts.push(
      `<text class="ytick" x="${MARGIN.left - 8}" y="${fmt(sy(t) + 4)}" text-anchor="end" font-size="11">${fmt(t)}</text>`,
    );
  }
  parts.push(
    `<text x="${MARGIN.left + plotW / 2}" y="${height - 8}" text-anchor="middle" font-size="12">iteration</text>`,
  );
  parts.push(
    `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" font-size="12" ` +
      `transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">discounted return</text>`,
  );

  const colorOf = new Map<CurveSeries, string>();
  series.forEach((s, i) => colorOf.set(s, PALETTE[i % PALETTE.length]));

  for (const s of curves) {
    const color = colorOf.get(s)!;
    const upper = s.points.map((p) => `${fmt(sx(p.iteration))},${fmt(sy(p.ciHigh))}`);
    const lower = [...s.points].reverse().map((p) => `${fmt(sx(p.iteration))},${fmt(sy(p.ciLow))}`);
    parts.push(
      `<polygon class="band" points="${[...upper, ...lower].join(" ")}" fill="${color}" fill-opacity="0.2" stroke="none"/>`,
    );
    const d = s.points
      .map((p, i) => `${i === 0 ? "M" : "L"}${fmt(sx(p.iteration))} ${fmt(sy(p.mean))}`)
      .join(" ");
    parts.push(
      `<path class="mean" d="${d}" fill="none" stroke="${color}" stroke-width="2.5"/>`,
    );
  }

  for (const s of references) {
    const color = colorOf.get(s)!;
    const y = fmt(sy(s.points[s.points.length - 1].mean));
    parts.push(
      `<path class="reference" d="M${fmt(MARGIN.left)} ${y} L${fmt(MARGIN.left + plotW)} ${y}" ` +
        `fill="none" stroke="${color}" stroke-width="2" stroke-dasharray="7 4"/>`,
    );
  }

  // legend: one entry per input series
  series.forEach((s, i) => {
    const color = colorOf.get(s)!;
    const lx = MARGIN.left + 12;
    const ly = MARGIN.top + 10 + 18 * i;
    const dash = isReference(s) ? ` stroke-dasharray="7 4"` : "";
    parts.push(
      `<g class="legend-entry">` +
        `<line x1="${lx}" y1="${ly}" x2="${lx + 26}" y2="${ly}" stroke="${color}" stroke-width="2.5"${dash}/>` +
        `<text x="${lx + 32}" y="${ly + 4}" font-size="12">${s.algorithm}</text>` +
        `</g>`,
    );
  });

  parts.push("</svg>");
  return parts.join("\n");
}
