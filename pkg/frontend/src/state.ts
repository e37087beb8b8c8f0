/**
 * Session state: the active query, its original ordering, and the history
 * strip. Pure data handling — nothing here touches the DOM or the network.
 */

import type { QueryResponse, RankedItem } from "./api.js";

export interface WeightSettings {
  lambda: number;
  beta: number;
}

export interface HistoryEntry {
  queryId: string;
  modificationText: string;
  sharedConcept?: string;
  mentalImageUrl: string | null;
  description: string | null;
  reference: Blob;
  results: RankedItem[];
}

/** Canonical byte form of a result list; equal strings = identical ordering,
 * ids, scores, and ranks. */
export function resultsFingerprint(results: RankedItem[]): string {
  return JSON.stringify(
    results.map((r) => [r.rank, r.image_id, r.score, r.image_url]),
  );
}

export function sameResults(a: RankedItem[], b: RankedItem[]): boolean {
  return resultsFingerprint(a) === resultsFingerprint(b);
}

export interface ActiveQuery {
  response: QueryResponse;
  reference: Blob;
  modificationText: string;
  sharedConcept?: string;
  /** Weights the query was answered with; the slider "defaults" position. */
  defaults: WeightSettings;
  /** Fingerprint of the as-answered ordering, for restore checks. */
  originalFingerprint: string;
}

export class SessionState {
  readonly history: HistoryEntry[] = [];
  active: ActiveQuery | null = null;
  current: RankedItem[] = [];

  beginQuery(
    response: QueryResponse,
    reference: Blob,
    modificationText: string,
    defaults: WeightSettings,
    sharedConcept?: string,
  ): ActiveQuery {
    const active: ActiveQuery = {
      response,
      reference,
      modificationText,
      sharedConcept,
      defaults,
      originalFingerprint: resultsFingerprint(response.results),
    };
    this.active = active;
    this.current = response.results;
    this.history.push({
      queryId: response.query_id,
      modificationText,
      sharedConcept,
      mentalImageUrl: response.mental_image_url,
      description: response.description,
      reference,
      results: response.results,
    });
    return active;
  }

  applyRerank(results: RankedItem[]): void {
    this.current = results;
  }

  /** True when the current ordering is byte-identical to the as-answered one. */
  isAtOriginalOrder(): boolean {
    return (
      this.active !== null &&
      resultsFingerprint(this.current) === this.active.originalFingerprint
    );
  }

  restore(index: number): HistoryEntry {
    const entry = this.history[index];
    if (!entry) throw new RangeError(`no history entry ${index}`);
    return entry;
  }
}
