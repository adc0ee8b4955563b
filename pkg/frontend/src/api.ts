/** Thin typed client over the service's JSON endpoints.
 *
 * The fetch implementation is injectable so tests can run against a fake
 * server; nothing here touches the DOM.
 */

import type {
  EditRequest,
  EditResponse,
  ModelInfo,
  SequenceInfo,
  SequencePayload,
  SynthesizeRequest,
  SynthesizeResponse,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, body?: unknown): Promise<T> {
    const init = body === undefined
      ? undefined
      : {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(body),
        };
    const res = await this.fetchImpl(this.baseUrl + path, init);
    const payload = await res.json();
    if (!res.ok) {
      const detail = (payload as { detail?: unknown })?.detail;
      throw new ApiError(res.status, typeof detail === "string" ? detail : JSON.stringify(detail));
    }
    return payload as T;
  }

  listModels(): Promise<ModelInfo[]> {
    return this.request<ModelInfo[]>("/models");
  }

  listSequences(): Promise<SequenceInfo[]> {
    return this.request<SequenceInfo[]>("/sequences");
  }

  getSequence(id: string): Promise<SequencePayload> {
    return this.request<SequencePayload>(`/sequences/${encodeURIComponent(id)}`);
  }

  synthesize(req: SynthesizeRequest): Promise<SynthesizeResponse> {
    return this.request<SynthesizeResponse>("/synthesize", req);
  }

  edit(req: EditRequest): Promise<EditResponse> {
    return this.request<EditResponse>("/edit", req);
  }
}
