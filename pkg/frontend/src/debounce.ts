/** Trailing-edge debounce for slider input.
 *
 * The wrapped function runs once per quiet window with the latest
 * arguments; scrubbing a slider therefore emits at most one request per
 * window. `flush` fires a pending call immediately, `cancel` drops it.
 */

export const SLIDER_DEBOUNCE_MS = 150;

export interface Debounced<A extends unknown[]> {
  (...args: A): void;
  cancel(): void;
  flush(): void;
  pending(): boolean;
}

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number = SLIDER_DEBOUNCE_MS,
): Debounced<A> {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let lastArgs: A | null = null;

  const fire = () => {
    timer = null;
    if (lastArgs !== null) {
      const args = lastArgs;
      lastArgs = null;
      fn(...args);
    }
  };

  const wrapped = (...args: A) => {
    lastArgs = args;
    if (timer !== null) {
      clearTimeout(timer);
    }
    timer = setTimeout(fire, delayMs);
  };

  wrapped.cancel = () => {
    if (timer !== null) {
      clearTimeout(timer);
      timer = null;
    }
    lastArgs = null;
  };

  wrapped.flush = () => {
    if (timer !== null) {
      clearTimeout(timer);
      fire();
    }
  };

  wrapped.pending = () => timer !== null;

  return wrapped;
}
