/**
 * Monotonic token issuer for discarding stale async results: take a
 * token before starting a request, and only apply the response if the
 * token is still the newest one. Guarantees at most one response per
 * panel ever lands, and it is always the most recent.
 */
export class LatestGate {
  private seq = 0;

  issue(): number {
    this.seq += 1;
    return this.seq;
  }

  isCurrent(token: number): boolean {
    return token === this.seq;
  }
}
