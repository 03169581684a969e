/** Conversions between `#rrggbb` strings and float RGB triplets in [0,1].
 *
 * The server speaks float triplets only; hex exists purely for the color
 * picker and swatch display. Hex divides by 255, matching the CLI.
 */

export type Rgb = [number, number, number];

const HEX_RE = /^#?([0-9a-fA-F]{6})$/;

export function hexToRgb(hex: string): Rgb {
  const m = HEX_RE.exec(hex.trim());
  if (!m) {
    throw new Error(`not a #rrggbb color: ${JSON.stringify(hex)}`);
  }
  const v = parseInt(m[1], 16);
  return [((v >> 16) & 0xff) / 255, ((v >> 8) & 0xff) / 255, (v & 0xff) / 255];
}

export function rgbToHex(rgb: readonly number[]): string {
  const parts = rgb.map((c) => {
    const byte = Math.round(clamp01(c) * 255);
    return byte.toString(16).padStart(2, "0");
  });
  return `#${parts.join("")}`;
}

export function clamp01(v: number): number {
  return Math.min(1, Math.max(0, v));
}

/** Compact fixed-point label for a triplet, e.g. "0.502, 0.000, 1.000". */
export function formatRgb(rgb: readonly number[], digits = 3): string {
  return rgb.map((c) => c.toFixed(digits)).join(", ");
}
