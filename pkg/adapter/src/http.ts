/**
 * Shared HTTP plumbing for the model clients: JSON POST with bearer auth,
 * retries with exponential backoff (Retry-After aware), a minimum spacing
 * between request starts, and a small promise pool so long captures never
 * flood an endpoint.
 */

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Serializes request starts so consecutive calls are at least intervalMs apart. */
export class RateLimiter {
  private nextAt = 0;
  private chain: Promise<void> = Promise.resolve();

  constructor(private readonly intervalMs: number) {}

  async wait(): Promise<void> {
    if (this.intervalMs <= 0) return;
    const turn = this.chain.then(async () => {
      const now = Date.now();
      const delay = this.nextAt - now;
      this.nextAt = Math.max(now, this.nextAt) + this.intervalMs;
      if (delay > 0) await sleep(delay);
    });
    // Keep the chain alive even if a waiter is abandoned.
    this.chain = turn.catch(() => {});
    return turn;
  }
}

/** Runs async jobs with at most `width` in flight; rejects on first failure. */
export async function mapPool<T, R>(
  items: T[],
  width: number,
  fn: (item: T, index: number) => Promise<R>,
): Promise<R[]> {
  const results = new Array<R>(items.length);
  let cursor = 0;
  const workers = Array.from({ length: Math.max(1, Math.min(width, items.length)) }, async () => {
    while (true) {
      const i = cursor++;
      if (i >= items.length) return;
      results[i] = await fn(items[i], i);
    }
  });
  await Promise.all(workers);
  return results;
}

export interface HttpOptions {
  maxRetries: number;
  timeoutMs: number;
  limiter?: RateLimiter;
  apiKey?: string;
}

export class HttpError extends Error {
  constructor(
    message: string,
    readonly status?: number,
    readonly body?: string,
  ) {
    super(message);
  }
}

function retryAfterMs(res: Response): number | undefined {
  const header = res.headers.get('retry-after');
  if (!header) return undefined;
  const seconds = Number(header);
  return Number.isFinite(seconds) ? Math.max(0, seconds * 1000) : undefined;
}

/**
 * POST a JSON body, parse a JSON reply. Retries network failures, 429 and
 * 5xx with doubling backoff starting at 250ms; other 4xx fail immediately.
 */
export async function postJson(
  url: string,
  body: unknown,
  options: HttpOptions,
): Promise<unknown> {
  let backoff = 250;
  for (let attempt = 0; ; attempt++) {
    if (options.limiter) await options.limiter.wait();
    let res: Response | undefined;
    let failure: unknown;
    try {
      const controller = new AbortController();
      const timer = setTimeout(() => controller.abort(), options.timeoutMs);
      try {
        res = await fetch(url, {
          method: 'POST',
          headers: {
            'content-type': 'application/json',
            ...(options.apiKey ? { authorization: `Bearer ${options.apiKey}` } : {}),
          },
          body: JSON.stringify(body),
          signal: controller.signal,
        });
      } finally {
        clearTimeout(timer);
      }
    } catch (err) {
      failure = err;
    }

    if (res?.ok) {
      const text = await res.text();
      try {
        return JSON.parse(text);
      } catch {
        throw new HttpError(`non-JSON reply from ${url}`, res.status, text.slice(0, 200));
      }
    }

    const status = res?.status;
    const retriable = failure !== undefined || status === 429 || (status ?? 0) >= 500;
    if (!retriable || attempt >= options.maxRetries) {
      if (failure !== undefined) {
        throw new HttpError(`request to ${url} failed: ${String(failure)}`);
      }
      const text = res ? (await res.text()).slice(0, 200) : '';
      throw new HttpError(`request to ${url} failed with status ${status}`, status, text);
    }
    const wait = (res && retryAfterMs(res)) ?? backoff;
    await sleep(wait);
    backoff *= 2;
  }
}
