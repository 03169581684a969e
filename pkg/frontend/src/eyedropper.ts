/** Maps a click on the (possibly CSS-scaled) preview element to preview
 * pixel coordinates. Clicks outside the image are ignored (null).
 */

export interface PixelHit {
  x: number;
  y: number;
}

export function pixelFromClick(
  offsetX: number,
  offsetY: number,
  displayWidth: number,
  displayHeight: number,
  previewWidth: number,
  previewHeight: number,
): PixelHit | null {
  if (displayWidth <= 0 || displayHeight <= 0) {
    return null;
  }
  if (
    offsetX < 0 ||
    offsetY < 0 ||
    offsetX >= displayWidth ||
    offsetY >= displayHeight
  ) {
    return null;
  }
  const x = Math.floor((offsetX / displayWidth) * previewWidth);
  const y = Math.floor((offsetY / displayHeight) * previewHeight);
  // guard the right/bottom edge against float rounding
  return {
    x: Math.min(x, previewWidth - 1),
    y: Math.min(y, previewHeight - 1),
  };
}
