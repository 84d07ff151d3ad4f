/**
 * Typed client for the prediction service. The transport is injected
 * so tests (and offline demos) can swap the network for a mock; the
 * base URL is plain configuration.
 */

export interface SchemaField {
  name: string;
  min: number;
  max: number;
}

export interface CategoryBand {
  name: string;
  lo: number;
  hi: number;
  color: string;
}

export interface Schema {
  features: SchemaField[];
  severity: { min: number; max: number };
  categories: CategoryBand[];
  cities: string[];
  pollutants: string[];
}

export interface AqiRequest {
  readings?: Record<string, number>;
  image_base64?: string;
  city?: string;
  timestamp?: string;
}

export interface AqiPrediction {
  pollutants: Record<string, number | null>;
  aqi: number;
  category: string;
  out_of_scale: boolean;
  dominant: string | null;
}

export interface SeverityRequest {
  features: Record<string, number>;
  model: "knn" | "svc";
  aqi?: number;
}

export interface SeverityPrediction {
  severity: number;
  model_used: string;
  exposure_level: number | null;
}

export interface ErrorBody {
  code: string;
  message: string;
  field?: string;
}

/** Service-reported failure, carrying the structured error payload. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: ErrorBody,
  ) {
    super(body.message);
    this.name = "ApiError";
  }
}

export interface TransportResponse {
  status: number;
  text(): Promise<string>;
}

export type Transport = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<TransportResponse>;

const fetchTransport: Transport = (url, init) => fetch(url, init);

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly transport: Transport = fetchTransport,
  ) {}

  fetchSchema(): Promise<Schema> {
    return this.request<Schema>("/schema");
  }

  predictAqi(req: AqiRequest): Promise<AqiPrediction> {
    return this.request<AqiPrediction>("/predict/aqi", req);
  }

  predictSeverity(req: SeverityRequest): Promise<SeverityPrediction> {
    return this.request<SeverityPrediction>("/predict/severity", req);
  }

  private async request<T>(path: string, payload?: unknown): Promise<T> {
    const init =
      payload === undefined
        ? undefined
        : {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(payload),
          };
    const response = await this.transport(this.baseUrl + path, init);
    const raw = await response.text();
    let parsed: unknown = null;
    try {
      parsed = raw === "" ? null : JSON.parse(raw);
    } catch {
      parsed = null;
    }
    if (response.status >= 200 && response.status < 300) {
      return parsed as T;
    }
    const body =
      parsed && typeof parsed === "object" && "code" in (parsed as object)
        ? (parsed as ErrorBody)
        : { code: "http_error", message: `request failed (${response.status})` };
    throw new ApiError(response.status, body);
  }
}

/**
 * Base URL resolution: a `<meta name="airhealth-api">` tag wins, then
 * a global set by the hosting page, then same-origin relative paths.
 */
export function resolveBaseUrl(doc: Document): string {
  const meta = doc.querySelector('meta[name="airhealth-api"]');
  const fromMeta = meta?.getAttribute("content");
  if (fromMeta) return fromMeta.replace(/\/$/, "");
  const fromGlobal = (globalThis as { AIRHEALTH_API?: string }).AIRHEALTH_API;
  if (fromGlobal) return fromGlobal.replace(/\/$/, "");
  return "";
}
