// Typed client for the session service. Every state change in the UI goes
// through here; genomes are never edited client-side.

export interface IntentState {
  kind: "none" | "text" | "image";
  text: string | null;
}

export interface SessionSummary {
  session_id: string;
  stage: string;
  generation: number;
  stage_generation: number;
  max_generations: number;
  intent: IntentState;
  frozen_gene_indices: number[];
  population_size: number;
  gene_count: number;
  image_size: [number, number];
  busy: boolean;
}

export interface GalleryEntry {
  genome_id: string;
  rating: number;
  url: string;
}

export interface Gallery {
  generation: number;
  stage: string;
  entries: GalleryEntry[];
}

export interface HistoryRecord {
  generation_index: number;
  stage: string;
  entries: GalleryEntry[];
}

export interface Progress {
  generation: number;
  phase: string;
  matches_done: number;
  matches_total: number;
  busy: boolean;
  error: string | null;
}

export interface Feature {
  gene_index: number;
  frozen: boolean;
  url: string;
}

export interface FeatureList {
  genome_id: string;
  features: Feature[];
}

export interface RefineResult {
  gene_index: number;
  stage: string;
  frozen_gene_indices: number[];
}

export interface CameraPose {
  yaw: number;
  pitch: number;
  dist: number;
}

export interface CreateSessionBody {
  volume:
    | string
    | { kind: "synthetic"; name: string; dims: number[] }
    | { kind: "raw"; descriptor_path: string };
  config?: { population_size?: number; max_generations?: number; rng_seed?: number };
  camera?: { yaw?: number; pitch?: number; dist?: number };
  image_size?: [number, number];
  gene_count?: number;
  shading?: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function throwFrom(res: Response): Promise<never> {
  let code = "internal";
  let message = `HTTP ${res.status}`;
  try {
    const body = (await res.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the generic message
  }
  throw new ApiError(res.status, code, message);
}

export class Api {
  constructor(readonly base: string = "") {}

  url(path: string): string {
    return this.base + path;
  }

  renderUrl(sessionId: string, genomeId: string, pose: CameraPose, size: number): string {
    const params = new URLSearchParams({
      genome: genomeId,
      yaw: pose.yaw.toFixed(2),
      pitch: pose.pitch.toFixed(2),
      dist: pose.dist.toFixed(3),
      size: String(size),
    });
    return this.url(`/sessions/${sessionId}/render?${params}`);
  }

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await fetch(this.url(path), init);
    if (!res.ok) await throwFrom(res);
    return (await res.json()) as T;
  }

  createSession(body: CreateSessionBody): Promise<{ session_id: string }> {
    return this.json("POST", "/sessions", body);
  }

  summary(sessionId: string): Promise<SessionSummary> {
    return this.json("GET", `/sessions/${sessionId}`);
  }

  step(sessionId: string, count = 1): Promise<{ status: string; count: number }> {
    return this.json("POST", `/sessions/${sessionId}/step`, { count });
  }

  progress(sessionId: string): Promise<Progress> {
    return this.json("GET", `/sessions/${sessionId}/progress`);
  }

  intentText(sessionId: string, text: string): Promise<{ stage: string }> {
    return this.json("POST", `/sessions/${sessionId}/intent`, { kind: "text", text });
  }

  intentImage(sessionId: string, imageBase64: string): Promise<{ stage: string }> {
    return this.json("POST", `/sessions/${sessionId}/intent`, {
      kind: "image",
      image_base64: imageBase64,
    });
  }

  pick(sessionId: string, x: number, y: number): Promise<{ gene_index: number }> {
    return this.json("POST", `/sessions/${sessionId}/pick`, { x, y });
  }

  refine(sessionId: string, geneIndex: number, directive: string): Promise<RefineResult> {
    return this.json("POST", `/sessions/${sessionId}/refine`, {
      gene_index: geneIndex,
      directive,
    });
  }

  gallery(sessionId: string, k = 8): Promise<Gallery> {
    return this.json("GET", `/sessions/${sessionId}/gallery?k=${k}`);
  }

  history(sessionId: string): Promise<{ records: HistoryRecord[] }> {
    return this.json("GET", `/sessions/${sessionId}/history`);
  }

  rollback(sessionId: string, generation: number): Promise<{ new_session_id: string }> {
    return this.json("POST", `/sessions/${sessionId}/rollback`, { generation });
  }

  features(sessionId: string): Promise<FeatureList> {
    return this.json("GET", `/sessions/${sessionId}/features`);
  }
}
