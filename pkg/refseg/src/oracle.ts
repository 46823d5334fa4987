/**
 * Threshold + morphology segmentation of one windowed cross-section.
 *
 * This mirrors the consumer's builtin oracle step for step so that a batch
 * pushed through the subprocess protocol yields pixel-identical masks:
 *  1. band thresholds on the dequantized values (lumen low, wall high),
 *  2. drop lumen candidates touching the image border (out-of-volume fill),
 *  3. keep the lumen component at/closest to the plane center,
 *  4. keep wall components within two pixels of that lumen,
 *  5. close the interpolation gap between the bands by the band midpoint.
 *
 * Arrays are indexed idx = u * nv + v for a logical (nu, nv) image.
 */

export const BG = 0, LUMEN = 1, WALL = 2;

export interface OracleOptions {
  tLow: number;
  tHigh: number;
}

export const DEFAULT_OPTIONS: OracleOptions = { tLow: 200.0, tHigh: 700.0 };

/**
 * Connected-component labeling; ids start at 1 in raster (first-pixel) order.
 * `eightConnected` switches between 4- and 8-neighborhoods.
 */
export function labelComponents(
  mask: Uint8Array, nu: number, nv: number, eightConnected: boolean,
): { labels: Int32Array; count: number } {
  const labels = new Int32Array(nu * nv);
  let count = 0;
  const stack: number[] = [];
  for (let u = 0; u < nu; u++) {
    for (let v = 0; v < nv; v++) {
      const start = u * nv + v;
      if (!mask[start] || labels[start]) continue;
      count++;
      labels[start] = count;
      stack.push(start);
      while (stack.length) {
        const idx = stack.pop()!;
        const cu = Math.floor(idx / nv);
        const cv = idx - cu * nv;
        for (let du = -1; du <= 1; du++) {
          for (let dv = -1; dv <= 1; dv++) {
            if (du === 0 && dv === 0) continue;
            if (!eightConnected && du !== 0 && dv !== 0) continue;
            const wu = cu + du, wv = cv + dv;
            if (wu < 0 || wu >= nu || wv < 0 || wv >= nv) continue;
            const widx = wu * nv + wv;
            if (mask[widx] && !labels[widx]) {
              labels[widx] = count;
              stack.push(widx);
            }
          }
        }
      }
    }
  }
  return { labels, count };
}

/** Binary dilation by a Chebyshev ball (full 3x3 structure, `radius` passes). */
export function dilate(mask: Uint8Array, nu: number, nv: number, radius: number): Uint8Array {
  const out = new Uint8Array(nu * nv);
  for (let u = 0; u < nu; u++) {
    for (let v = 0; v < nv; v++) {
      let hit = 0;
      for (let du = -radius; du <= radius && !hit; du++) {
        const wu = u + du;
        if (wu < 0 || wu >= nu) continue;
        for (let dv = -radius; dv <= radius; dv++) {
          const wv = v + dv;
          if (wv < 0 || wv >= nv) continue;
          if (mask[wu * nv + wv]) { hit = 1; break; }
        }
      }
      out[u * nv + v] = hit;
    }
  }
  return out;
}

function borderIds(labels: Int32Array, nu: number, nv: number): Set<number> {
  const ids = new Set<number>();
  for (let v = 0; v < nv; v++) {
    if (labels[v]) ids.add(labels[v]);
    if (labels[(nu - 1) * nv + v]) ids.add(labels[(nu - 1) * nv + v]);
  }
  for (let u = 0; u < nu; u++) {
    if (labels[u * nv]) ids.add(labels[u * nv]);
    if (labels[u * nv + nv - 1]) ids.add(labels[u * nv + nv - 1]);
  }
  return ids;
}

export function oracleLabels(
  vals: Float64Array, nu: number, nv: number,
  opts: OracleOptions = DEFAULT_OPTIONS,
): Uint8Array {
  const n = nu * nv;
  const lumenCand = new Uint8Array(n);
  const wallCand = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    if (vals[i] <= opts.tLow) lumenCand[i] = 1;
    if (vals[i] >= opts.tHigh) wallCand[i] = 1;
  }
  const labels = new Uint8Array(n);

  const lum = labelComponents(lumenCand, nu, nv, false);
  const border = borderIds(lum.labels, nu, nv);
  const interior: number[] = [];
  for (let id = 1; id <= lum.count; id++) {
    if (!border.has(id)) interior.push(id);
  }
  if (interior.length === 0) return labels;

  const cu = (nu - 1) / 2.0;
  const cv = (nv - 1) / 2.0;
  let centerId = lum.labels[Math.round(cu) * nv + Math.round(cv)];
  if (!interior.includes(centerId)) {
    // nearest interior component by squared pixel distance to the center
    let best = 0;
    let bestD = Infinity;
    for (const id of interior) {
      let d = Infinity;
      for (let u = 0; u < nu; u++) {
        for (let v = 0; v < nv; v++) {
          if (lum.labels[u * nv + v] === id) {
            const dd = (u - cu) * (u - cu) + (v - cv) * (v - cv);
            if (dd < d) d = dd;
          }
        }
      }
      if (d < bestD) { best = id; bestD = d; }
    }
    centerId = best;
  }

  const lumen = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    if (lum.labels[i] === centerId) { lumen[i] = 1; labels[i] = LUMEN; }
  }

  const wall = labelComponents(wallCand, nu, nv, true);
  if (wall.count > 0) {
    const ring = dilate(lumen, nu, nv, 2);
    const touching = new Set<number>();
    for (let i = 0; i < n; i++) {
      if (ring[i] && wallCand[i] && wall.labels[i]) touching.add(wall.labels[i]);
    }
    if (touching.size > 0) {
      for (let i = 0; i < n; i++) {
        if (wall.labels[i] && touching.has(wall.labels[i])) labels[i] = WALL;
      }
    }
  }

  // interpolated values can land between the bands: assign pixels adjacent
  // to both regions by the band midpoint so the wall ring stays closed
  const mid = 0.5 * (opts.tLow + opts.tHigh);
  for (let pass = 0; pass < 2; pass++) {
    const isLumen = new Uint8Array(n);
    const isWall = new Uint8Array(n);
    for (let i = 0; i < n; i++) {
      if (labels[i] === LUMEN) isLumen[i] = 1;
      if (labels[i] === WALL) isWall[i] = 1;
    }
    const nearLumen = dilate(isLumen, nu, nv, 1);
    const nearWall = dilate(isWall, nu, nv, 2);
    let any = false;
    const gap = new Uint8Array(n);
    for (let i = 0; i < n; i++) {
      if (labels[i] === BG && nearLumen[i] && nearWall[i]) { gap[i] = 1; any = true; }
    }
    if (!any) break;
    for (let i = 0; i < n; i++) {
      if (gap[i]) labels[i] = vals[i] <= mid ? LUMEN : WALL;
    }
  }
  return labels;
}
