/** Thin fetch client for the style-toolkit service JSON API. */

import type {
  ApiError,
  GlobalManipulationRequest,
  HealthInfo,
  JobRecord,
  ManipulationResult,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function toApiError(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body === "object") {
      code = (body.code as string) ?? code;
      message = (body.message as string) ?? message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return { status: response.status, code, message };
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      throw await toApiError(response);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
  }

  health(): Promise<HealthInfo> {
    return this.request<HealthInfo>("/health");
  }

  async uploadImage(file: Blob, name = "upload.png"): Promise<{ image_id: string }> {
    const form = new FormData();
    form.append("file", file, name);
    return this.request<{ image_id: string }>("/images", { method: "POST", body: form });
  }

  manipulateGlobal(
    req: GlobalManipulationRequest,
    signal?: AbortSignal,
  ): Promise<ManipulationResult> {
    return this.post<ManipulationResult>("/manipulate/global", req, signal);
  }

  precompute(params: Record<string, unknown> = {}): Promise<{ job_id: string }> {
    return this.post<{ job_id: string }>("/directions/precompute", params);
  }

  optimize(body: Record<string, unknown>): Promise<{ job_id: string }> {
    return this.post<{ job_id: string }>("/manipulate/optimize", body);
  }

  getJob(jobId: string): Promise<JobRecord> {
    return this.request<JobRecord>(`/jobs/${jobId}`);
  }

  getJobResult(jobId: string): Promise<Record<string, unknown>> {
    return this.request<Record<string, unknown>>(`/jobs/${jobId}/result`);
  }

  listMappers(): Promise<Array<{ name: string; prompt: string }>> {
    return this.request<Array<{ name: string; prompt: string }>>("/mappers");
  }

  applyMapper(name: string, imageId: string): Promise<ManipulationResult> {
    return this.post<ManipulationResult>(`/mappers/${name}/apply`, { image_id: imageId });
  }
}
