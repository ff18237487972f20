/** Typed client for the exploration HTTP API.
 *
 * The UI owns no model state: every mutation goes through these POSTs and
 * every view is rebuilt from GET responses. Server errors (422 validation,
 * 503 model-not-loaded, 404 unknown ids) surface verbatim via ApiError so
 * the banner can show exactly what the server said.
 */

export interface Meta {
  latent_dim: number;
  T: number;
  default_t_noise: number;
  mesh_resolution: number;
  n_table_latents: number;
}

export interface SessionCreated {
  session_id: string;
  root_id: string;
}

export interface HistoryNode {
  id: string;
  parent: string | null;
  t_noise: number;
  seed: number;
}

export interface History {
  session_id: string;
  root_id: string;
  current_id: string;
  nodes: HistoryNode[];
}

export interface VariationsResult {
  variation_ids: string[];
  t_noise: number;
  seed: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function raise(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (typeof body.detail === "string") detail = body.detail;
    else if (body.detail) detail = JSON.stringify(body.detail);
  } catch {
    /* non-JSON error body: keep the status text */
  }
  throw new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) await raise(resp);
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
  }

  meta(): Promise<Meta> {
    return this.json<Meta>("/meta");
  }

  createSession(sourceIndex: number): Promise<SessionCreated> {
    return this.post<SessionCreated>("/sessions", { source_index: sourceIndex });
  }

  history(sessionId: string): Promise<History> {
    return this.json<History>(`/sessions/${sessionId}`);
  }

  requestVariations(
    sessionId: string,
    tNoise: number,
    k: number,
    seed: number,
    signal?: AbortSignal,
  ): Promise<VariationsResult> {
    return this.post<VariationsResult>(
      `/sessions/${sessionId}/variations`,
      { t_noise: tNoise, k, seed },
      signal,
    );
  }

  promote(sessionId: string, nodeId: string): Promise<{ current_id: string }> {
    return this.post<{ current_id: string }>(`/sessions/${sessionId}/seed`, {
      node_id: nodeId,
    });
  }

  async meshText(nodeId: string): Promise<string> {
    const resp = await this.fetchFn(`${this.base}/meshes/${nodeId}`);
    if (!resp.ok) await raise(resp);
    return resp.text();
  }
}
