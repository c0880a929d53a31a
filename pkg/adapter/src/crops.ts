/**
 * Multi-scale crop rectangles for one detection: the 2D box scaled about
 * its center by each configured ratio, clamped to the image bounds.
 */

import { bestFitIndex } from './fusion.js';

export type Box = [number, number, number, number]; // x0, y0, x1, y1 pixel edges

const clamp = (v: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, v));

export function scaleBox(box: Box, ratio: number, width: number, height: number): Box {
  const [x0, y0, x1, y1] = box;
  if (!(x1 > x0 && y1 > y0)) throw new Error('box must have positive extent');
  if (!(ratio > 0)) throw new Error('ratio must be positive');
  const cx = (x0 + x1) / 2;
  const cy = (y0 + y1) / 2;
  const hw = ((x1 - x0) / 2) * ratio;
  const hh = ((y1 - y0) / 2) * ratio;
  return [
    clamp(cx - hw, 0, width),
    clamp(cy - hh, 0, height),
    clamp(cx + hw, 0, width),
    clamp(cy + hh, 0, height),
  ];
}

/**
 * One rect per ratio, ordered best-fit first (ratio 1.0 if present, else the
 * smallest) so downstream weighted fusion can use index 0 as its reference.
 * Returns the rects and the matching reordered ratio list.
 */
export function cropRects(
  box: Box,
  ratios: number[],
  width: number,
  height: number,
): { rects: Box[]; order: number[] } {
  const ref = bestFitIndex(ratios);
  const order = [ref, ...ratios.map((_, i) => i).filter((i) => i !== ref)];
  return {
    rects: order.map((i) => scaleBox(box, ratios[i], width, height)),
    order,
  };
}
