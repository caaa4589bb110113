import type {
  BundleInfo,
  CreateSessionResponse,
  NextResponse,
  Stats,
  SubmitResponse,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json();
  if (!resp.ok) {
    throw new ApiError(resp.status, body.code ?? "error", body.message ?? resp.statusText);
  }
  return body as T;
}

/** Thin typed client over the session service endpoints. */
export class ServiceClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async listBundles(): Promise<BundleInfo[]> {
    const body = await parse<{ bundles: BundleInfo[] }>(
      await this.fetchFn(`${this.baseUrl}/bundles`),
    );
    return body.bundles;
  }

  createSession(bundle: string, overrides: Record<string, unknown> = {}) {
    return this.request<CreateSessionResponse>("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ bundle, overrides }),
    });
  }

  next(sessionId: string) {
    return this.request<NextResponse>(`/sessions/${sessionId}/next`);
  }

  submit(sessionId: string, sampleId: number, labels: number[]) {
    return this.request<SubmitResponse>(`/sessions/${sessionId}/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ sample_id: sampleId, labels }),
    });
  }

  stats(sessionId: string) {
    return this.request<Stats>(`/sessions/${sessionId}/stats`);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    return parse<T>(await this.fetchFn(`${this.baseUrl}${path}`, init));
  }
}
