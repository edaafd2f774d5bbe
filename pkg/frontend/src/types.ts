export type FigureKind =
  | "entropy_time"
  | "satisfaction_time"
  | "bubble_time"
  | "ecdf"
  | "sweep_compare";

export const FIGURE_KINDS: FigureKind[] = [
  "entropy_time",
  "satisfaction_time",
  "bubble_time",
  "ecdf",
  "sweep_compare",
];

export interface Point {
  x: number;
  y: number;
}

export interface Series {
  name: string;
  points: Point[];
}

export interface FigureData {
  kind: FigureKind;
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
}

export interface FigureSpec {
  kind: FigureKind;
  input: string;
  output: string;
  /** grouping column (ecdf): a CSV column or a demographic feature joined from profiles */
  group?: string;
  /** ecdf value column: entropy or coverage */
  value?: string;
  /** hierarchy level used when aggregating per-user metrics (ecdf) */
  level?: number;
  /** sweep_compare y column, e.g. mean_entropy_l1 */
  metric?: string;
  /** profiles.jsonl path for demographic ecdf joins */
  profiles?: string;
  dumpArrays?: boolean;
}
