import { FigureData, Point, Series } from "./types.js";

export interface RenderOptions {
  width?: number;
  height?: number;
}

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];
const MARGIN = { top: 42, right: 150, bottom: 48, left: 62 };

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function extent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  return [lo, hi];
}

function ticks(lo: number, hi: number, count: number): number[] {
  const step = (hi - lo) / (count - 1);
  return Array.from({ length: count }, (_, i) => lo + i * step);
}

function formatTick(value: number): string {
  if (Number.isInteger(value)) return String(value);
  return value.toFixed(Math.abs(value) < 1 ? 2 : 1);
}

/** Step path (right-continuous): hold the previous y until the next x. */
function stepPath(points: Point[], sx: (x: number) => number, sy: (y: number) => number): string {
  const parts = [`M ${sx(points[0].x).toFixed(2)} ${sy(points[0].y).toFixed(2)}`];
  for (let i = 1; i < points.length; i++) {
    parts.push(`H ${sx(points[i].x).toFixed(2)}`);
    parts.push(`V ${sy(points[i].y).toFixed(2)}`);
  }
  return parts.join(" ");
}

function linePath(points: Point[], sx: (x: number) => number, sy: (y: number) => number): string {
  return points
    .map((p, i) => `${i === 0 ? "M" : "L"} ${sx(p.x).toFixed(2)} ${sy(p.y).toFixed(2)}`)
    .join(" ");
}

export function renderFigure(data: FigureData, options: RenderOptions = {}): string {
  if (data.series.length === 0 || data.series.every((s) => s.points.length === 0)) {
    throw new Error("nothing to plot: no series");
  }
  const width = options.width ?? 640;
  const height = options.height ?? 400;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  const xs = data.series.flatMap((s) => s.points.map((p) => p.x));
  const ys = data.series.flatMap((s) => s.points.map((p) => p.y));
  const [xLo, xHi] = extent(xs);
  let [yLo, yHi] = extent([...ys, 0]);
  yHi += (yHi - yLo) * 0.05;

  const sx = (x: number) => MARGIN.left + ((x - xLo) / (xHi - xLo)) * plotW;
  const sy = (y: number) => MARGIN.top + plotH - ((y - yLo) / (yHi - yLo)) * plotH;

  const distinctXs = [...new Set(xs)].sort((a, b) => a - b);
  const xTicks = distinctXs.length <= 8 ? distinctXs : ticks(xLo, xHi, 6);
  const yTicks = ticks(yLo, yHi, 5);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" font-family="sans-serif" font-size="11">`,
  );
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  parts.push(
    `<text x="${MARGIN.left}" y="22" font-size="14" font-weight="bold">${escapeXml(data.title)}</text>`,
  );

  for (const t of yTicks) {
    const y = sy(t).toFixed(2);
    parts.push(
      `<line class="y-tick" x1="${MARGIN.left}" x2="${MARGIN.left + plotW}" y1="${y}" y2="${y}" stroke="#ddd"/>`,
    );
    parts.push(
      `<text x="${MARGIN.left - 6}" y="${y}" text-anchor="end" dominant-baseline="middle">${formatTick(t)}</text>`,
    );
  }
  for (const t of xTicks) {
    const x = sx(t).toFixed(2);
    const y0 = MARGIN.top + plotH;
    parts.push(
      `<line class="x-tick" x1="${x}" x2="${x}" y1="${y0}" y2="${y0 + 5}" stroke="#333"/>`,
    );
    parts.push(
      `<text x="${x}" y="${y0 + 17}" text-anchor="middle">${formatTick(t)}</text>`,
    );
  }
  parts.push(
    `<line x1="${MARGIN.left}" x2="${MARGIN.left + plotW}" y1="${MARGIN.top + plotH}" y2="${MARGIN.top + plotH}" stroke="#333"/>`,
  );
  parts.push(
    `<line x1="${MARGIN.left}" x2="${MARGIN.left}" y1="${MARGIN.top}" y2="${MARGIN.top + plotH}" stroke="#333"/>`,
  );
  parts.push(
    `<text x="${MARGIN.left + plotW / 2}" y="${height - 8}" text-anchor="middle">${escapeXml(data.xLabel)}</text>`,
  );
  parts.push(
    `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" ` +
      `transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">${escapeXml(data.yLabel)}</text>`,
  );

  data.series.forEach((series: Series, index: number) => {
    const color = PALETTE[index % PALETTE.length];
    const path =
      data.kind === "ecdf" ? stepPath(series.points, sx, sy) : linePath(series.points, sx, sy);
    parts.push(
      `<path class="series" d="${path}" fill="none" stroke="${color}" stroke-width="1.8"/>`,
    );
    for (const p of series.points) {
      parts.push(
        `<circle cx="${sx(p.x).toFixed(2)}" cy="${sy(p.y).toFixed(2)}" r="2.2" fill="${color}"/>`,
      );
    }
    const ly = MARGIN.top + 14 * index;
    const lx = MARGIN.left + plotW + 12;
    parts.push(`<line x1="${lx}" x2="${lx + 16}" y1="${ly}" y2="${ly}" stroke="${color}" stroke-width="2"/>`);
    parts.push(
      `<text x="${lx + 20}" y="${ly}" dominant-baseline="middle">${escapeXml(series.name)}</text>`,
    );
  });

  parts.push("</svg>");
  return parts.join("\n");
}
