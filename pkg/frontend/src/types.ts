// Wire types for the session service (HTTP+JSON).

export interface Stats {
  n: number;
  correct: number;
  accuracy: number;
  cost: number;
  cost_per_sample: number;
  mode_histogram: Record<string, number>;
  remaining: number;
}

export interface BundleInfo {
  id: string;
  lambda: number | null;
  M: number | null;
  num_classes: number | null;
}

export interface BackgroundPoint {
  x: number;
  y: number;
  label: number;
}

export interface CreateSessionResponse {
  id: string;
  bundle: string;
  num_classes: number;
  M: number;
  human_slots: number;
  n_samples: number;
  background: BackgroundPoint[];
}

export interface ResolvedInfo {
  prediction: number;
  correct: boolean;
  true_label: number | null;
}

export interface NextResponse {
  done: boolean;
  stats: Stats;
  sample_id?: number;
  features?: number[];
  render?: { x: number; y: number };
  mode?: string;
  selection_probs?: number[];
  ai_hint?: number | null;
  labels_needed?: number;
  resolved?: ResolvedInfo;
}

export interface SubmitResponse {
  prediction: number;
  correct: boolean;
  true_label: number | null;
  stats: Stats;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
