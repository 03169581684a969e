/** Journal row model: what one committed edit looks like in the history
 * panel. Residuals and m come straight from the server's edit response —
 * the UI never recomputes them.
 */

import type { EditRequest, EditResponse, JournalRecord, Triplet } from "./api";

export interface JournalRow {
  index: number;
  cIn: Triplet;
  cOut: Triplet;
  k: number;
  s: number;
  m: number;
  touched: number[];
  /** present when the row was observed live; absent after a reload */
  residualBefore?: Triplet;
  residualAfter?: Triplet;
}

export function appendEditRow(
  rows: JournalRow[],
  req: EditRequest,
  res: EditResponse,
): JournalRow[] {
  return [
    ...rows,
    {
      index: rows.length,
      cIn: req.c_in,
      cOut: req.c_out,
      k: req.k,
      s: req.s,
      m: res.m,
      touched: res.touched,
      residualBefore: res.residual_before,
      residualAfter: res.residual_after,
    },
  ];
}

/** Rebuild rows from GET /journal (residuals unknown for replayed rows). */
export function rowsFromServer(records: JournalRecord[]): JournalRow[] {
  return records.map((r, index) => ({
    index,
    cIn: r.c_in,
    cOut: r.c_out,
    k: r.k,
    s: r.s,
    m: r.m,
    touched: r.touched,
  }));
}

const fmt = (t: readonly number[]) =>
  t.map((v) => v.toFixed(4)).join(", ");

/** One-line text form used by the history list. */
export function describeRow(row: JournalRow): string {
  const head =
    `#${row.index + 1} k=${row.k} s=${row.s.toFixed(2)} ` +
    `m=${row.m.toFixed(4)}`;
  if (!row.residualBefore || !row.residualAfter) {
    return head;
  }
  return `${head} | residual (${fmt(row.residualBefore)}) -> (${fmt(row.residualAfter)})`;
}
