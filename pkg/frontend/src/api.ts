/** Typed client for the editing service HTTP API.
 *
 * Mutating calls (edit / undo / blend) are chained onto a per-client queue
 * so at most one is in flight per session; reads go out immediately. All
 * color math happens on the server — this module only moves JSON.
 */

export type Triplet = [number, number, number];

export interface SessionInfo {
  session_id: string;
  revision: number;
  preview_url: string;
  preview_width: number;
  preview_height: number;
  styles: number | null;
  gaussians: number;
}

export interface EditRequest {
  c_in: Triplet;
  c_out: Triplet;
  k: number;
  s: number;
}

export interface EditResponse {
  revision: number;
  m: number;
  touched: number[];
  residual_before: Triplet;
  residual_after: Triplet;
  preview_url: string;
}

export interface UndoResponse {
  revision: number;
  journal_length: number;
  preview_url: string;
}

export interface BlendResponse {
  revision: number;
  journal_length: number;
  preview_url: string;
}

export interface PixelResponse {
  source: Triplet;
  current: Triplet;
}

export interface JournalRecord {
  c_in: Triplet;
  c_out: Triplet;
  k: number;
  s: number;
  m: number;
  touched: number[];
  deltas: number[][];
}

export interface JournalResponse {
  revision: number;
  records: JournalRecord[];
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

type FetchFn = typeof fetch;

async function raise(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (typeof body?.detail === "string") {
      detail = body.detail;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, detail);
}

export class EditClient {
  private mutationQueue: Promise<unknown> = Promise.resolve();

  constructor(
    public readonly baseUrl: string,
    private readonly fetchFn: FetchFn = (...a) => fetch(...a),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.url(path));
    if (!res.ok) {
      await raise(res);
    }
    return (await res.json()) as T;
  }

  /** Serializes mutations: each waits for the previous one to settle. */
  private enqueue<T>(work: () => Promise<T>): Promise<T> {
    const next = this.mutationQueue.then(work, work);
    this.mutationQueue = next.catch(() => undefined);
    return next;
  }

  private postJson<T>(path: string, body: unknown): Promise<T> {
    return this.enqueue(async () => {
      const res = await this.fetchFn(this.url(path), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
      if (!res.ok) {
        await raise(res);
      }
      return (await res.json()) as T;
    });
  }

  async createSession(
    image: Blob,
    model: Blob,
    style?: number,
  ): Promise<SessionInfo> {
    const form = new FormData();
    form.append("image", image, "image.png");
    form.append("model", model, "model.glut");
    if (style !== undefined) {
      form.append("style", String(style));
    }
    const res = await this.fetchFn(this.url("/sessions"), {
      method: "POST",
      body: form,
    });
    if (!res.ok) {
      await raise(res);
    }
    return (await res.json()) as SessionInfo;
  }

  edit(sid: string, req: EditRequest): Promise<EditResponse> {
    return this.postJson(`/sessions/${sid}/edit`, req);
  }

  undo(sid: string): Promise<UndoResponse> {
    return this.postJson(`/sessions/${sid}/undo`, {});
  }

  blend(
    sid: string,
    l1: number,
    l2: number,
    alpha: number,
  ): Promise<BlendResponse> {
    return this.postJson(`/sessions/${sid}/blend`, { l1, l2, alpha });
  }

  pixel(sid: string, x: number, y: number): Promise<PixelResponse> {
    return this.getJson(`/sessions/${sid}/pixel?x=${x}&y=${y}`);
  }

  journal(sid: string): Promise<JournalResponse> {
    return this.getJson(`/sessions/${sid}/journal`);
  }

  async previewBytes(previewUrl: string): Promise<Uint8Array> {
    const res = await this.fetchFn(this.url(previewUrl));
    if (!res.ok) {
      await raise(res);
    }
    return new Uint8Array(await res.arrayBuffer());
  }

  exportCubeUrl(sid: string, size = 33): string {
    return this.url(`/sessions/${sid}/export.cube?size=${size}`);
  }

  exportModelUrl(sid: string): string {
    return this.url(`/sessions/${sid}/export.model`);
  }
}
