/**
 * Typed client for the retrieval service HTTP API.
 *
 * The UI holds no retrieval logic: every score and rank displayed comes
 * verbatim from these payloads. fetch is injectable so tests can run the
 * client against canned responses.
 */

export interface RankedItem {
  image_id: string;
  score: number;
  rank: number;
  image_url: string;
}

export interface QueryResponse {
  query_id: string;
  mental_image_url: string | null;
  description: string | null;
  results: RankedItem[];
  timings: Record<string, number>;
}

export interface RerankResponse {
  query_id: string;
  results: RankedItem[];
  timings: Record<string, number>;
}

export interface StoreInfo {
  n: number;
  dim: number;
  encoder_id: string;
  config_digest: string;
  dataset_kind: string;
  lambda: number;
  beta: number;
  rerankable_beta: boolean;
}

export interface HealthInfo {
  status: string;
  backends: Record<string, string>;
}

export interface QueryRequest {
  reference: Blob;
  modificationText: string;
  sharedConcept?: string;
  lambda?: number;
  k?: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const POLL_INTERVAL_MS = 150;
const POLL_LIMIT = 400; // ~60 s of patience for slow real backends

async function errorFrom(resp: Response): Promise<ApiError> {
  let detail = resp.statusText;
  try {
    const body = (await resp.json()) as { detail?: string; error?: string };
    detail = body.detail ?? body.error ?? detail;
  } catch {
    /* non-JSON error body; keep statusText */
  }
  return new ApiError(resp.status, detail);
}

export class ParacosmClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    private readonly sleep: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  /** Submit a composed query; transparently polls when the service answers 202. */
  async submitQuery(req: QueryRequest): Promise<QueryResponse> {
    const form = new FormData();
    form.append("reference", req.reference, "reference.png");
    form.append("modification_text", req.modificationText);
    if (req.sharedConcept !== undefined) form.append("shared_concept", req.sharedConcept);
    if (req.lambda !== undefined) form.append("lambda", String(req.lambda));
    if (req.k !== undefined) form.append("k", String(req.k));

    const resp = await this.fetchFn(this.url("/api/query"), { method: "POST", body: form });
    if (resp.status === 202) {
      const { query_id } = (await resp.json()) as { query_id: string };
      return this.pollQuery(query_id);
    }
    if (!resp.ok) throw await errorFrom(resp);
    return (await resp.json()) as QueryResponse;
  }

  private async pollQuery(queryId: string): Promise<QueryResponse> {
    for (let attempt = 0; attempt < POLL_LIMIT; attempt++) {
      const resp = await this.fetchFn(this.url(`/api/query/${queryId}`));
      if (resp.status === 202) {
        await this.sleep(POLL_INTERVAL_MS);
        continue;
      }
      if (!resp.ok) throw await errorFrom(resp);
      return (await resp.json()) as QueryResponse;
    }
    throw new ApiError(504, `query ${queryId} never completed`);
  }

  async rerank(queryId: string, lambda?: number, beta?: number): Promise<RerankResponse> {
    const body: Record<string, unknown> = { query_id: queryId };
    if (lambda !== undefined) body.lambda = lambda;
    if (beta !== undefined) body.beta = beta;
    const resp = await this.fetchFn(this.url("/api/rerank"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await errorFrom(resp);
    return (await resp.json()) as RerankResponse;
  }

  async health(): Promise<HealthInfo> {
    const resp = await this.fetchFn(this.url("/api/health"));
    if (!resp.ok) throw await errorFrom(resp);
    return (await resp.json()) as HealthInfo;
  }

  async storeInfo(): Promise<StoreInfo> {
    const resp = await this.fetchFn(this.url("/api/store/info"));
    if (!resp.ok) throw await errorFrom(resp);
    return (await resp.json()) as StoreInfo;
  }
}
