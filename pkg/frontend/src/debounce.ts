/**
 * Debounce: run `fn` once per quiet period of `delayMs` after the last call.
 * Used for the strength/disentanglement sliders so dragging issues a single
 * request.
 */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number,
): ((...args: A) => void) & { cancel(): void; flush(): void } {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let lastArgs: A | null = null;

  const debounced = ((...args: A) => {
    lastArgs = args;
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      if (lastArgs !== null) fn(...lastArgs);
    }, delayMs);
  }) as ((...args: A) => void) & { cancel(): void; flush(): void };

  debounced.cancel = () => {
    if (timer !== null) {
      clearTimeout(timer);
      timer = null;
    }
    lastArgs = null;
  };

  debounced.flush = () => {
    if (timer !== null) {
      clearTimeout(timer);
      timer = null;
      if (lastArgs !== null) fn(...lastArgs);
    }
  };

  return debounced;
}
