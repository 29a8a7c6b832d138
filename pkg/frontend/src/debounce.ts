/** Leading-plus-trailing throttle used to cap patch requests per second. */

export interface Throttled<A extends unknown[]> {
  (...args: A): void;
  /** Drop any scheduled trailing call. */
  cancel(): void;
}

type Clock = {
  now(): number;
  setTimeout(fn: () => void, ms: number): ReturnType<typeof setTimeout>;
  clearTimeout(id: ReturnType<typeof setTimeout>): void;
};

const realClock: Clock = {
  now: () => Date.now(),
  setTimeout: (fn, ms) => setTimeout(fn, ms),
  clearTimeout: (id) => clearTimeout(id),
};

/**
 * Rate-limit `fn` to at most one call per `intervalMs`.
 *
 * The first call in an idle period fires immediately (leading edge); calls
 * arriving inside the interval are coalesced and the most recent argument
 * set fires once the interval elapses (trailing edge). With intervalMs=250
 * this bounds sustained traffic to 4 calls per second while keeping both
 * the first and the final slider position.
 */
export function throttle<A extends unknown[]>(
  fn: (...args: A) => void,
  intervalMs: number,
  clock: Clock = realClock,
): Throttled<A> {
  let lastFired = -Infinity;
  let timer: ReturnType<typeof setTimeout> | null = null;
  let pendingArgs: A | null = null;

  const fire = (args: A) => {
    lastFired = clock.now();
    fn(...args);
  };

  const onTimer = () => {
    timer = null;
    if (pendingArgs !== null) {
      const args = pendingArgs;
      pendingArgs = null;
      fire(args);
    }
  };

  const wrapped = (...args: A) => {
    const elapsed = clock.now() - lastFired;
    if (timer === null && elapsed >= intervalMs) {
      fire(args);
      return;
    }
    pendingArgs = args;
    if (timer === null) {
      timer = clock.setTimeout(onTimer, Math.max(0, intervalMs - elapsed));
    }
  };

  wrapped.cancel = () => {
    if (timer !== null) {
      clock.clearTimeout(timer);
      timer = null;
    }
    pendingArgs = null;
  };

  return wrapped;
}
