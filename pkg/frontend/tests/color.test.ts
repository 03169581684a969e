import { describe, expect, it } from "vitest";
import { clamp01, formatRgb, hexToRgb, rgbToHex } from "../src/color";

describe("hexToRgb", () => {
  it("divides channel bytes by 255", () => {
    expect(hexToRgb("#ff0000")).toEqual([1, 0, 0]);
    expect(hexToRgb("#000000")).toEqual([0, 0, 0]);
    expect(hexToRgb("#ffffff")).toEqual([1, 1, 1]);
    const [r, g, b] = hexToRgb("#336699");
    expect(r).toBeCloseTo(0x33 / 255, 12);
    expect(g).toBeCloseTo(0x66 / 255, 12);
    expect(b).toBeCloseTo(0x99 / 255, 12);
  });

  it("accepts bare and padded forms", () => {
    expect(hexToRgb("8000ff")).toEqual(hexToRgb("#8000ff"));
    expect(hexToRgb("  #8000ff ")).toEqual(hexToRgb("#8000ff"));
  });

  it("rejects malformed strings", () => {
    for (const bad of ["", "#fff", "#12345", "#gghhii", "rgb(1,2,3)"]) {
      expect(() => hexToRgb(bad)).toThrow(/not a #rrggbb/);
    }
  });
});

describe("rgbToHex", () => {
  it("round trips every byte through hexToRgb", () => {
    for (let byte = 0; byte < 256; byte += 17) {
      const hex = `#${byte.toString(16).padStart(2, "0").repeat(3)}`;
      expect(rgbToHex(hexToRgb(hex))).toBe(hex);
    }
  });

  it("rounds to the nearest byte and clamps outliers", () => {
    expect(rgbToHex([0.5, 0, 1])).toBe("#8000ff"); // 127.5 rounds up
    expect(rgbToHex([-0.2, 1.7, 0.25])).toBe("#00ff40");
  });
});

describe("clamp01 / formatRgb", () => {
  it("clamps into the unit interval", () => {
    expect(clamp01(-3)).toBe(0);
    expect(clamp01(0.25)).toBe(0.25);
    expect(clamp01(9)).toBe(1);
  });

  it("formats fixed-point labels", () => {
    expect(formatRgb([0.5, 0, 1])).toBe("0.500, 0.000, 1.000");
    expect(formatRgb([0.123456, 0.9, 0.5], 2)).toBe("0.12, 0.90, 0.50");
  });
});
