/** Editor session state with server-driven transitions.
 *
 * Every mutation below is fed by a server response carrying a revision
 * number; responses older than the current revision are discarded, so a
 * slow reply can never roll the UI backwards. Controls stay disabled until
 * a session exists, and the journal view mirrors the server journal order.
 */

import type {
  BlendResponse,
  EditRequest,
  EditResponse,
  PixelResponse,
  SessionInfo,
  Triplet,
  UndoResponse,
} from "./api";
import { appendEditRow, type JournalRow } from "./journal";

export interface EditorState {
  session: SessionInfo | null;
  revision: number;
  previewUrl: string | null;
  /** eyedropped source color, and the transform of it at pick time */
  cIn: Triplet | null;
  cInCurrent: Triplet | null;
  cOut: Triplet | null;
  k: number;
  s: number;
  blendL1: number;
  blendL2: number;
  alpha: number;
  journal: JournalRow[];
  status: string;
}

export type Listener = (state: EditorState) => void;

const clamp = (v: number, lo: number, hi: number) =>
  Math.min(hi, Math.max(lo, v));

export class EditorStore {
  private state: EditorState = {
    session: null,
    revision: -1,
    previewUrl: null,
    cIn: null,
    cInCurrent: null,
    cOut: null,
    k: 4,
    s: 1.0,
    blendL1: 0,
    blendL2: 1,
    alpha: 0.5,
    journal: [],
    status: "",
  };
  private listeners: Listener[] = [];

  get(): EditorState {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private set(patch: Partial<EditorState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) {
      fn(this.state);
    }
  }

  /** True once a session exists; edit/undo/export controls key off this. */
  controlsEnabled(): boolean {
    return this.state.session !== null;
  }

  /** Blend needs a conditional model with at least two styles. */
  blendEnabled(): boolean {
    const styles = this.state.session?.styles ?? null;
    return styles !== null && styles >= 2;
  }

  /** An edit can be committed once the eyedropper and picker are both set. */
  editReady(): boolean {
    return (
      this.controlsEnabled() &&
      this.state.cIn !== null &&
      this.state.cOut !== null
    );
  }

  /** Revision gate: accept equal (zero-delta edits don't bump) or newer. */
  private accepts(revision: number): boolean {
    return revision >= this.state.revision;
  }

  startSession(info: SessionInfo): void {
    this.set({
      session: info,
      revision: info.revision,
      previewUrl: info.preview_url,
      cIn: null,
      cInCurrent: null,
      cOut: null,
      k: clamp(this.state.k, 1, info.gaussians),
      journal: [],
      status: "",
    });
  }

  /** Eyedrop result: set c_in and default c_out to the current f(c_in),
   * which makes the starting residual zero. */
  applyEyedrop(px: PixelResponse): void {
    this.set({
      cIn: px.source,
      cInCurrent: px.current,
      cOut: px.current,
      status: "",
    });
  }

  setCOut(c: Triplet): void {
    this.set({ cOut: c, status: "" });
  }

  setK(k: number): void {
    const n = this.state.session?.gaussians ?? 1;
    this.set({ k: clamp(Math.round(k), 1, n) });
  }

  setS(s: number): void {
    this.set({ s: clamp(s, 0, 1) });
  }

  setBlendPair(l1: number, l2: number): void {
    this.set({ blendL1: l1, blendL2: l2 });
  }

  setAlpha(alpha: number): void {
    this.set({ alpha: clamp(alpha, 0, 1) });
  }

  /** Returns false when the response lost the revision race. */
  applyEdit(req: EditRequest, res: EditResponse): boolean {
    if (!this.accepts(res.revision)) {
      return false;
    }
    this.set({
      revision: res.revision,
      previewUrl: res.preview_url,
      journal: appendEditRow(this.state.journal, req, res),
      status: "",
    });
    return true;
  }

  applyUndo(res: UndoResponse): boolean {
    if (!this.accepts(res.revision)) {
      return false;
    }
    this.set({
      revision: res.revision,
      previewUrl: res.preview_url,
      journal: this.state.journal.slice(0, res.journal_length),
      status: "",
    });
    return true;
  }

  /** Blend resets the session base: the server clears its journal. */
  applyBlend(res: BlendResponse): boolean {
    if (!this.accepts(res.revision)) {
      return false;
    }
    this.set({
      revision: res.revision,
      previewUrl: res.preview_url,
      journal: [],
      status: "",
    });
    return true;
  }

  setStatus(message: string): void {
    this.set({ status: message });
  }
}
