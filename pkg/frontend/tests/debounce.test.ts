import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { debounce } from "../src/debounce.js";

beforeEach(() => vi.useFakeTimers());
afterEach(() => vi.useRealTimers());

describe("debounce", () => {
  it("fires once per quiet period with the last arguments", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 150);
    fn(1);
    fn(2);
    vi.advanceTimersByTime(100);
    fn(3);
    vi.advanceTimersByTime(149);
    expect(calls).toEqual([]);
    vi.advanceTimersByTime(1);
    expect(calls).toEqual([3]);
  });

  it("fires again after a new burst", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 150);
    fn(1);
    vi.advanceTimersByTime(150);
    fn(2);
    vi.advanceTimersByTime(150);
    expect(calls).toEqual([1, 2]);
  });

  it("cancel drops the scheduled call", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 150);
    fn(1);
    fn.cancel();
    vi.advanceTimersByTime(1000);
    expect(calls).toEqual([]);
  });

  it("flush runs the pending call immediately", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 150);
    fn(7);
    fn.flush();
    expect(calls).toEqual([7]);
    vi.advanceTimersByTime(1000);
    expect(calls).toEqual([7]);
  });
});
