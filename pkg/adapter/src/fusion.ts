/**
 * Embedding fusion arithmetic, restated here so the adapter can fuse
 * multi-scale crop embeddings without a Python dependency at capture time.
 *
 * Must stay numerically interchangeable with the scenefuse package; the
 * fixture suite in test/fusion.test.ts pins both sides to 1e-6.
 * Fused vectors are NOT renormalized.
 */

export type Vec = number[];

function checkMatrix(vectors: Vec[], what: string): void {
  if (vectors.length === 0) {
    throw new Error(`${what} must contain at least one vector`);
  }
  const dim = vectors[0].length;
  for (const v of vectors) {
    if (v.length !== dim || dim === 0) {
      throw new Error(`${what} vectors must share one dimension`);
    }
    for (const x of v) {
      if (!Number.isFinite(x)) throw new Error(`${what} vectors must be finite`);
    }
  }
}

export function cosine(a: Vec, b: Vec): number {
  if (a.length !== b.length) {
    throw new Error('cosine requires equal-dimension vectors');
  }
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = Math.sqrt(na);
  nb = Math.sqrt(nb);
  if (na === 0 || nb === 0) {
    throw new Error('cosine is undefined for a zero vector');
  }
  return dot / (na * nb);
}

/** Unweighted mean of the k crop embeddings. */
export function fuseMultiscaleDirect(crops: Vec[]): Vec {
  checkMatrix(crops, 'crops');
  const dim = crops[0].length;
  const out = new Array<number>(dim).fill(0);
  for (const c of crops) {
    for (let i = 0; i < dim; i++) out[i] += c[i];
  }
  for (let i = 0; i < dim; i++) out[i] /= crops.length;
  return out;
}

/**
 * Mean of crop embeddings, each weighted by its cosine to the first.
 * crops[0] is the best-fit (tightest) crop.
 */
export function fuseMultiscaleWeighted(crops: Vec[]): Vec {
  checkMatrix(crops, 'crops');
  const dim = crops[0].length;
  const ref = crops[0];
  const out = new Array<number>(dim).fill(0);
  for (const c of crops) {
    const w = cosine(ref, c);
    for (let i = 0; i < dim; i++) out[i] += w * c[i];
  }
  for (let i = 0; i < dim; i++) out[i] /= crops.length;
  return out;
}

/** Unweighted mean of the m per-view embeddings. */
export function fuseMultiviewDirect(views: Vec[]): Vec {
  checkMatrix(views, 'views');
  return fuseMultiscaleDirect(views);
}

/** Mean over views of (view + cos(view, frame_global) * frame_global). */
export function fuseMultiviewGlobal(views: Vec[], globals: Vec[]): Vec {
  checkMatrix(views, 'views');
  checkMatrix(globals, 'globals');
  if (views.length !== globals.length || views[0].length !== globals[0].length) {
    throw new Error('views and globals must align one-to-one');
  }
  const dim = views[0].length;
  const out = new Array<number>(dim).fill(0);
  for (let k = 0; k < views.length; k++) {
    const w = cosine(views[k], globals[k]);
    for (let i = 0; i < dim; i++) out[i] += views[k][i] + w * globals[k][i];
  }
  for (let i = 0; i < dim; i++) out[i] /= views.length;
  return out;
}

/** Index of the crop to treat as best-fit: ratio 1.0 if present, else the smallest. */
export function bestFitIndex(ratios: number[]): number {
  if (ratios.length === 0) throw new Error('ratios must be non-empty');
  for (const r of ratios) {
    if (!(r > 0)) throw new Error('ratios must be positive');
  }
  for (let i = 0; i < ratios.length; i++) {
    if (ratios[i] === 1.0) return i;
  }
  let best = 0;
  for (let i = 1; i < ratios.length; i++) {
    if (ratios[i] < ratios[best]) best = i;
  }
  return best;
}

/** Schemes 3 and 4 weight crops toward the best fit; 1 and 2 average them. */
export function fuseMultiscaleForScheme(scheme: number, crops: Vec[]): Vec {
  if (![1, 2, 3, 4].includes(scheme)) {
    throw new Error('scheme must be one of 1, 2, 3, 4');
  }
  return scheme === 3 || scheme === 4
    ? fuseMultiscaleWeighted(crops)
    : fuseMultiscaleDirect(crops);
}
