/** DTOs for the style-toolkit service JSON API. */

export interface GlobalManipulationRequest {
  image_id: string;
  target: string;
  neutral: string;
  alpha: number;
  beta?: number;
  k?: number;
}

export interface ManipulationResult {
  image_png_base64?: string;
  image_key?: string;
  active_channels: number;
  beta_used: number;
  alpha: number;
}

export interface JobRecord {
  id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  progress: number;
  result: Record<string, unknown> | null;
  error: string | null;
}

export interface HealthInfo {
  backend_kind: string;
  fingerprint: string;
  stats_available: boolean;
  interactive_defaults: Record<string, { alpha: number; k: number }>;
}

export interface ApiError {
  status: number;
  code: string;
  message: string;
}

export function isApiError(value: unknown): value is ApiError {
  return (
    typeof value === "object" &&
    value !== null &&
    "status" in value &&
    "code" in value
  );
}
