import { readFileSync } from "node:fs";
import Papa from "papaparse";

export interface Table {
  columns: string[];
  rows: Record<string, string>[];
}

export function loadCsv(path: string): Table {
  const text = readFileSync(path, "utf-8");
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const err = parsed.errors[0];
    throw new Error(`failed to parse ${path}: ${err.message} (row ${err.row})`);
  }
  const columns = parsed.meta.fields ?? [];
  return { columns, rows: parsed.data };
}

export function loadJsonl(path: string): Record<string, unknown>[] {
  const text = readFileSync(path, "utf-8");
  return text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line, i) => {
      try {
        return JSON.parse(line) as Record<string, unknown>;
      } catch (exc) {
        throw new Error(`${path} line ${i + 1}: invalid JSON`);
      }
    });
}

export function requireColumns(table: Table, needed: string[], context: string): void {
  for (const column of needed) {
    if (!table.columns.includes(column)) {
      throw new Error(`${context}: missing column "${column}"`);
    }
  }
}

export function num(row: Record<string, string>, column: string): number {
  const value = Number(row[column]);
  if (!Number.isFinite(value)) {
    throw new Error(`column "${column}" has non-numeric value "${row[column]}"`);
  }
  return value;
}
