/** Diverging colormap for the dual-energy index overlay. DEI lives in
 * (-1, 1) but clinically interesting values sit within a few percent of
 * zero, so the display range is a parameter.
 */

export function deiColor(
  value: number,
  displayMax = 0.05,
): [number, number, number, number] {
  if (!(displayMax > 0)) {
    throw new RangeError("display range must be positive");
  }
  const t = Math.min(Math.max(value / displayMax, -1), 1);
  // blue (negative) through white to red (positive)
  const r = t >= 0 ? 255 : Math.round(255 * (1 + t));
  const b = t <= 0 ? 255 : Math.round(255 * (1 - t));
  const g = Math.round(255 * (1 - Math.abs(t)));
  return [r, g, b, 255];
}
