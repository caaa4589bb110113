import { ApiError, ServiceClient } from "./api.js";
import type { BackgroundPoint, ResolvedInfo, Stats } from "./types.js";

export type Phase = "idle" | "awaiting" | "pending" | "done";

export interface CurrentSample {
  sampleId: number;
  point: { x: number; y: number } | null;
  mode: string;
  aiHint: number | null;
  labelsNeeded: number;
}

export interface ViewState {
  phase: Phase;
  bundle: string | null;
  sessionId: string | null;
  numClasses: number;
  background: BackgroundPoint[];
  current: CurrentSample | null;
  lastOutcome: (ResolvedInfo & { sampleId: number; mode: string }) | null;
  /** Running figures, always verbatim from service responses. */
  gauges: Stats | null;
  error: string | null;
}

function initialState(): ViewState {
  return {
    phase: "idle",
    bundle: null,
    sessionId: null,
    numClasses: 0,
    background: [],
    current: null,
    lastOutcome: null,
    gauges: null,
    error: null,
  };
}

/**
 * Session state machine. Owns no DOM; the UI subscribes via onChange.
 * The console never computes accuracy or cost itself: gauges are set only
 * from stats payloads the service returned.
 */
export class SessionClient {
  state: ViewState = initialState();
  private inflight = false;

  constructor(
    private api: ServiceClient,
    private onChange: (s: ViewState) => void = () => {},
  ) {}

  private emit() {
    this.onChange(this.state);
  }

  get canSubmit(): boolean {
    return this.state.phase === "pending" && !this.inflight;
  }

  get active(): boolean {
    return this.state.phase === "awaiting" || this.state.phase === "pending";
  }

  async start(bundle: string, overrides: Record<string, unknown> = {}): Promise<void> {
    const created = await this.api.createSession(bundle, overrides);
    this.state = {
      ...initialState(),
      phase: "awaiting",
      bundle,
      sessionId: created.id,
      numClasses: created.num_classes,
      background: created.background,
    };
    // no stats in the create payload: sync once so gauges start authoritative
    this.state.gauges = await this.api.stats(created.id);
    this.emit();
  }

  /** Fetch the next sample; a resolved (no-labels-owed) sample counts as one step. */
  async step(): Promise<void> {
    if (this.state.phase !== "awaiting" || this.inflight) return;
    this.inflight = true;
    try {
      const next = await this.api.next(this.state.sessionId!);
      this.state.gauges = next.stats;
      if (next.done) {
        this.state.phase = "done";
        this.state.current = null;
      } else if ((next.labels_needed ?? 0) > 0) {
        this.state.phase = "pending";
        this.state.current = {
          sampleId: next.sample_id!,
          point: next.render ?? null,
          mode: next.mode!,
          // defer modes never show the AI's opinion (anchoring guard;
          // the service already nulls it, this is belt and braces)
          aiHint: next.mode!.startsWith("defer") ? null : next.ai_hint ?? null,
          labelsNeeded: next.labels_needed!,
        };
      } else {
        this.state.current = {
          sampleId: next.sample_id!,
          point: next.render ?? null,
          mode: next.mode!,
          aiHint: null,
          labelsNeeded: 0,
        };
        this.state.lastOutcome = {
          ...next.resolved!,
          sampleId: next.sample_id!,
          mode: next.mode!,
        };
      }
      this.state.error = null;
    } catch (err) {
      await this.recover(err);
    } finally {
      this.inflight = false;
      this.emit();
    }
  }

  /** Submit one human label for the pending sample; re-clicks no-op. */
  async submit(label: number): Promise<void> {
    if (!this.canSubmit) return;
    const current = this.state.current!;
    this.inflight = true;
    try {
      const labels = new Array(current.labelsNeeded).fill(label);
      const resp = await this.api.submit(this.state.sessionId!, current.sampleId, labels);
      this.state.gauges = resp.stats;
      this.state.lastOutcome = {
        prediction: resp.prediction,
        correct: resp.correct,
        true_label: resp.true_label,
        sampleId: current.sampleId,
        mode: current.mode,
      };
      this.state.phase = "awaiting";
      this.state.current = null;
      this.state.error = null;
    } catch (err) {
      await this.recover(err);
    } finally {
      this.inflight = false;
      this.emit();
    }
  }

  /** Walk samples until human input is needed or the queue ends. */
  async advance(maxSteps = 10_000): Promise<void> {
    let steps = 0;
    while (this.state.phase === "awaiting" && steps < maxSteps) {
      await this.step();
      steps += 1;
    }
  }

  private async recover(err: unknown): Promise<void> {
    if (err instanceof ApiError && err.status === 409) {
      // out of sync (e.g. double poll): re-fetch authoritative stats
      if (this.state.sessionId) {
        this.state.gauges = await this.api.stats(this.state.sessionId);
      }
      this.state.error = err.message;
      return;
    }
    this.state.error = err instanceof Error ? err.message : String(err);
  }
}
