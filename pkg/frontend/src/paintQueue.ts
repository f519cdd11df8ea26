import { ApiError, StrokeRequest, StrokeResponse, StrokeRay } from "./api.js";

export interface PendingStroke {
  label: number;
  radius: number;
  ray?: StrokeRay;
  face?: number;
  ts?: number;
}

export type StrokePoster = (stroke: StrokeRequest) => Promise<StrokeResponse>;

export interface PaintQueueHooks {
  /** stroke landed; recolor the affected faces */
  onApplied?: (resp: StrokeResponse, stroke: PendingStroke) => void;
  /** server said 422 (ray miss, bad stroke); nothing changes visually */
  onRejected?: (err: ApiError, stroke: PendingStroke) => void;
  onError?: (err: unknown, stroke: PendingStroke) => void;
}

/**
 * Serializes stroke requests. The server checks stroke sequence numbers,
 * so at most one request is ever in flight; strokes painted while one is
 * pending queue up locally and go out in order. A 409 from the server
 * (stale seq, e.g. after a reconnect) resyncs the counter and retries.
 */
export class PaintQueue {
  private readonly post: StrokePoster;
  private readonly hooks: PaintQueueHooks;
  private readonly queue: PendingStroke[] = [];
  private seq: number;
  private pumping = false;
  private idleWaiters: Array<() => void> = [];

  constructor(post: StrokePoster, hooks: PaintQueueHooks = {}, nextSeq = 1) {
    this.post = post;
    this.hooks = hooks;
    this.seq = nextSeq;
  }

  get inFlight(): boolean {
    return this.pumping;
  }

  get pendingCount(): number {
    return this.queue.length;
  }

  get nextSeq(): number {
    return this.seq;
  }

  submit(stroke: PendingStroke): void {
    this.queue.push(stroke);
    if (!this.pumping) {
      this.pumping = true;
      void this.pump();
    }
  }

  /** Resolves once every queued stroke has been sent and settled. */
  idle(): Promise<void> {
    if (!this.pumping) {
      return Promise.resolve();
    }
    return new Promise((resolve) => this.idleWaiters.push(resolve));
  }

  private async sendOne(stroke: PendingStroke): Promise<void> {
    const request: StrokeRequest = { seq: this.seq, ...stroke };
    try {
      const resp = await this.post(request);
      this.seq = resp.next_seq;
      this.hooks.onApplied?.(resp, stroke);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409 && err.expectedSeq !== undefined) {
        // stale counter: adopt the server's expectation and retry once
        this.seq = err.expectedSeq;
        const retry: StrokeRequest = { seq: this.seq, ...stroke };
        const resp = await this.post(retry);
        this.seq = resp.next_seq;
        this.hooks.onApplied?.(resp, stroke);
        return;
      }
      throw err;
    }
  }

  private async pump(): Promise<void> {
    while (this.queue.length > 0) {
      const stroke = this.queue.shift()!;
      try {
        await this.sendOne(stroke);
      } catch (err) {
        if (err instanceof ApiError && err.status === 422) {
          this.hooks.onRejected?.(err, stroke);
        } else {
          this.hooks.onError?.(err, stroke);
        }
      }
    }
    this.pumping = false;
    const waiters = this.idleWaiters;
    this.idleWaiters = [];
    for (const resolve of waiters) {
      resolve();
    }
  }
}
