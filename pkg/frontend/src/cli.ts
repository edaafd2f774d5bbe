#!/usr/bin/env node
import { writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { loadCsv } from "./csv.js";
import { buildFigure } from "./figures.js";
import { renderFigure } from "./svg.js";
import { FIGURE_KINDS, FigureKind, FigureSpec } from "./types.js";

const USAGE = `usage: plot --kind <kind> --in <csv> --out <svg> [options]

kinds: ${FIGURE_KINDS.join(", ")}

options:
  --group <col>       ecdf grouping: a CSV column, or a demographic feature
                      (gender, city_level, phone_price, age) with --profiles
  --value <col>       ecdf value column (entropy or coverage; default entropy)
  --level <n>         hierarchy level for per-user aggregation (default 1)
  --metric <col>      sweep_compare y column (default mean_entropy_l1)
  --profiles <jsonl>  profiles.jsonl for demographic joins
  --width <px> --height <px>
  --dump-arrays       print the plotted series as JSON to stdout`;

function fail(message: string): never {
  process.stderr.write(`error: ${message}\n`);
  process.exit(1);
}

export function main(argv: string[]): void {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        kind: { type: "string" },
        in: { type: "string" },
        out: { type: "string" },
        group: { type: "string" },
        value: { type: "string" },
        level: { type: "string" },
        metric: { type: "string" },
        profiles: { type: "string" },
        width: { type: "string" },
        height: { type: "string" },
        "dump-arrays": { type: "boolean" },
        help: { type: "boolean" },
      },
    });
  } catch (exc) {
    fail((exc as Error).message);
  }
  const values = parsed.values;
  if (values.help) {
    process.stdout.write(USAGE + "\n");
    return;
  }
  if (!values.kind || !values.in || !values.out) {
    fail(`--kind, --in, and --out are required\n${USAGE}`);
  }
  if (!FIGURE_KINDS.includes(values.kind as FigureKind)) {
    fail(`unknown figure kind "${values.kind}" (choose from ${FIGURE_KINDS.join(", ")})`);
  }
  const spec: FigureSpec = {
    kind: values.kind as FigureKind,
    input: values.in!,
    output: values.out!,
    group: values.group,
    value: values.value,
    level: values.level ? Number(values.level) : undefined,
    metric: values.metric,
    profiles: values.profiles,
    dumpArrays: values["dump-arrays"] ?? false,
  };
  let svg: string;
  let dumped = "";
  try {
    const table = loadCsv(spec.input);
    const figure = buildFigure(table, spec);
    svg = renderFigure(figure, {
      width: values.width ? Number(values.width) : undefined,
      height: values.height ? Number(values.height) : undefined,
    });
    if (spec.dumpArrays) {
      dumped = JSON.stringify(
        figure.series.map((s) => ({
          name: s.name,
          x: s.points.map((p) => p.x),
          y: s.points.map((p) => p.y),
        })),
      );
    }
  } catch (exc) {
    fail((exc as Error).message);
  }
  writeFileSync(spec.output, svg, "utf-8");
  if (dumped) process.stdout.write(dumped + "\n");
  process.stderr.write(`wrote ${spec.output}\n`);
}

main(process.argv.slice(2));
