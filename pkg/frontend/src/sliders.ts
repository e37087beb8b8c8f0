/**
 * Rerank scheduling for the weight sliders.
 *
 * The service budget is one cheap call per slider release, so scheduling is
 * queue-and-replace with a single request in flight: while a rerank runs,
 * newer requests overwrite each other and only the newest runs afterwards.
 */

export interface Weights {
  lambda: number;
  beta: number;
}

export type RerankRunner = (weights: Weights) => Promise<void>;

export class RerankScheduler {
  private inFlight = false;
  private queued: Weights | null = null;
  /** Settles every time the scheduler goes idle; handy for tests. */
  private idleResolvers: Array<() => void> = [];

  constructor(private readonly run: RerankRunner) {}

  /** Called on slider release. */
  request(weights: Weights): void {
    if (this.inFlight) {
      this.queued = { ...weights };
      return;
    }
    void this.launch({ ...weights });
  }

  private async launch(weights: Weights): Promise<void> {
    this.inFlight = true;
    try {
      // The runner owns user-visible error handling; a throw here must not
      // wedge the queue or surface as an unhandled rejection.
      await this.run(weights);
    } catch {
      /* swallowed by design */
    } finally {
      this.inFlight = false;
      const next = this.queued;
      this.queued = null;
      if (next) {
        void this.launch(next);
      } else {
        for (const resolve of this.idleResolvers.splice(0)) resolve();
      }
    }
  }

  get busy(): boolean {
    return this.inFlight || this.queued !== null;
  }

  async settle(): Promise<void> {
    if (!this.busy) return;
    await new Promise<void>((resolve) => this.idleResolvers.push(resolve));
  }
}
