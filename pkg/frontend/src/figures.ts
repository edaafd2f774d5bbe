import { Table, loadJsonl, num, requireColumns } from "./csv.js";
import { FigureData, FigureKind, FigureSpec, Point, Series } from "./types.js";

const LEVELS = [1, 2, 3];

function sortedNumeric(values: Iterable<number>): number[] {
  return [...new Set(values)].sort((a, b) => a - b);
}

function mean(values: number[]): number {
  let total = 0;
  for (const v of values) total += v;
  return total / values.length;
}

function groupRows(
  rows: Record<string, string>[],
  key: (row: Record<string, string>) => string,
): Map<string, Record<string, string>[]> {
  const grouped = new Map<string, Record<string, string>[]>();
  for (const row of rows) {
    const k = key(row);
    const bucket = grouped.get(k);
    if (bucket) bucket.push(row);
    else grouped.set(k, [row]);
  }
  return grouped;
}

/** One series per hierarchy level of a per-iteration column, averaging the
 * per-user metrics schema or passing the summary schema through. */
function perLevelSeries(table: Table, metricsColumn: string, summaryColumn: string): Series[] {
  const isSummary = table.columns.includes(summaryColumn);
  const column = isSummary ? summaryColumn : metricsColumn;
  requireColumns(table, ["iteration", "level", column], "time series input");
  return LEVELS.map((level) => {
    const rows = table.rows.filter((r) => num(r, "level") === level);
    const byIteration = groupRows(rows, (r) => r["iteration"]);
    const points: Point[] = sortedNumeric(
      rows.map((r) => num(r, "iteration")),
    ).map((iteration) => {
      const bucket = byIteration.get(String(iteration))!;
      const values = bucket.map((r) => num(r, column));
      return { x: iteration, y: isSummary ? values[0] : mean(values) };
    });
    return { name: `level ${level}`, points };
  }).filter((s) => s.points.length > 0);
}

export function entropyTime(table: Table): Series[] {
  return perLevelSeries(table, "entropy", "mean_entropy");
}

export function satisfactionTime(table: Table): Series[] {
  const isSummary = table.columns.includes("mean_satisfaction");
  const column = isSummary ? "mean_satisfaction" : "satisfaction";
  requireColumns(table, ["iteration", "level", column], "satisfaction input");
  // satisfaction is per-user, not per-level; level-1 rows carry it once
  const rows = table.rows.filter((r) => num(r, "level") === 1);
  const byIteration = groupRows(rows, (r) => r["iteration"]);
  const points = sortedNumeric(rows.map((r) => num(r, "iteration"))).map((iteration) => {
    const values = byIteration.get(String(iteration))!.map((r) => num(r, column));
    return { x: iteration, y: isSummary ? values[0] : mean(values) };
  });
  return [{ name: "mean satisfaction", points }];
}

export function bubbleTime(table: Table): Series[] {
  if (table.columns.includes("bubble_proportion")) {
    return perLevelSeries(table, "bubble_proportion", "bubble_proportion");
  }
  requireColumns(table, ["iteration", "level", "bubble_status"], "bubble input");
  return LEVELS.map((level) => {
    const rows = table.rows.filter((r) => num(r, "level") === level);
    const byIteration = groupRows(rows, (r) => r["iteration"]);
    const points = sortedNumeric(rows.map((r) => num(r, "iteration"))).map((iteration) => {
      const bucket = byIteration.get(String(iteration))!;
      const inside = bucket.filter((r) => r["bubble_status"] === "in").length;
      return { x: iteration, y: inside / bucket.length };
    });
    return { name: `level ${level}`, points };
  }).filter((s) => s.points.length > 0);
}

function ecdfPoints(values: number[]): Point[] {
  const ordered = [...values].sort((a, b) => a - b);
  const n = ordered.length;
  const points: Point[] = [];
  for (let i = 0; i < n; i++) {
    if (i + 1 === n || ordered[i + 1] !== ordered[i]) {
      points.push({ x: ordered[i], y: (i + 1) / n });
    }
  }
  return points;
}

const AGE_BANDS: [number, number][] = [
  [16, 25],
  [26, 35],
  [36, 45],
  [46, 60],
];

function demographicGroup(profile: Record<string, unknown>, feature: string): string {
  if (feature === "age") {
    const age = Number(profile["age"]);
    for (const [lo, hi] of AGE_BANDS) {
      if (age >= lo && age <= hi) return `${lo}-${hi}`;
    }
    return `>${AGE_BANDS[AGE_BANDS.length - 1][1]}`;
  }
  if (!(feature in profile)) {
    throw new Error(`profiles are missing demographic feature "${feature}"`);
  }
  return String(profile[feature]);
}

export function ecdf(table: Table, spec: FigureSpec): Series[] {
  const valueColumn = spec.value ?? "entropy";
  const group = spec.group;
  if (!group) {
    throw new Error("ecdf requires --group (a CSV column or demographic feature)");
  }
  // direct mode: the CSV already carries the group labels
  if (table.columns.includes(group)) {
    requireColumns(table, [valueColumn], "ecdf input");
    const grouped = groupRows(table.rows, (r) => r[group]);
    return [...grouped.keys()].sort().map((name) => ({
      name,
      points: ecdfPoints(grouped.get(name)!.map((r) => num(r, valueColumn))),
    }));
  }
  // joined mode: per-user metrics + profiles.jsonl demographics
  if (!spec.profiles) {
    throw new Error(
      `ecdf input: missing column "${group}" (pass --profiles to join demographics)`,
    );
  }
  requireColumns(table, ["user_id", "level", valueColumn], "ecdf input");
  const level = spec.level ?? 1;
  const byUser = groupRows(
    table.rows.filter((r) => num(r, "level") === level),
    (r) => r["user_id"],
  );
  const profiles = new Map(
    loadJsonl(spec.profiles).map((p) => [String(p["user_id"]), p]),
  );
  const groups = new Map<string, number[]>();
  for (const [userId, rows] of byUser) {
    const profile = profiles.get(userId);
    if (!profile) throw new Error(`no profile for user ${userId}`);
    const label = demographicGroup(profile, group);
    const value = mean(rows.map((r) => num(r, valueColumn)));
    const bucket = groups.get(label);
    if (bucket) bucket.push(value);
    else groups.set(label, [value]);
  }
  return [...groups.keys()].sort().map((name) => ({
    name,
    points: ecdfPoints(groups.get(name)!),
  }));
}

export function sweepCompare(table: Table, spec: FigureSpec): Series[] {
  const metric = spec.metric ?? "mean_entropy_l1";
  requireColumns(table, ["value", "seed", "iteration", metric], "sweep input");
  const byValue = groupRows(table.rows, (r) => r["value"]);
  return [...byValue.keys()].sort().map((value) => {
    const rows = byValue.get(value)!;
    const byIteration = groupRows(rows, (r) => r["iteration"]);
    const points = sortedNumeric(rows.map((r) => num(r, "iteration"))).map((iteration) => ({
      x: iteration,
      y: mean(byIteration.get(String(iteration))!.map((r) => num(r, metric))),
    }));
    return { name: value, points };
  });
}

const LABELS: Record<FigureKind, { title: string; x: string; y: string }> = {
  entropy_time: { title: "Entropy over time per level", x: "iteration", y: "mean entropy (nats)" },
  satisfaction_time: { title: "Satisfaction over time", x: "iteration", y: "mean satisfaction" },
  bubble_time: { title: "In-bubble proportion over time per level", x: "iteration", y: "bubble proportion" },
  ecdf: { title: "ECDF by group", x: "value", y: "cumulative fraction" },
  sweep_compare: { title: "Sweep comparison", x: "iteration", y: "metric" },
};

export function buildFigure(table: Table, spec: FigureSpec): FigureData {
  if (table.rows.length === 0) {
    throw new Error(`empty input: ${spec.input}`);
  }
  let series: Series[];
  switch (spec.kind) {
    case "entropy_time":
      series = entropyTime(table);
      break;
    case "satisfaction_time":
      series = satisfactionTime(table);
      break;
    case "bubble_time":
      series = bubbleTime(table);
      break;
    case "ecdf":
      series = ecdf(table, spec);
      break;
    case "sweep_compare":
      series = sweepCompare(table, spec);
      break;
    default:
      throw new Error(`unknown figure kind "${spec.kind}"`);
  }
  const labels = LABELS[spec.kind];
  const yLabel = spec.kind === "sweep_compare" ? spec.metric ?? "mean_entropy_l1" : labels.y;
  const xLabel = spec.kind === "ecdf" ? spec.value ?? "entropy" : labels.x;
  return { kind: spec.kind, title: labels.title, xLabel, yLabel, series };
}
