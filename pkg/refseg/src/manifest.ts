/** batch.json parsing and validation for the exchange protocol. */

export interface BatchItem {
  id: string;
  nu: number;
  nv: number;
  spacing_mm: number;
  window: [number, number];
}

export class ManifestError extends Error {}

export function parseManifest(text: string): BatchItem[] {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (e) {
    throw new ManifestError(`batch.json is not valid JSON: ${(e as Error).message}`);
  }
  if (!Array.isArray(raw)) throw new ManifestError("batch.json must be an array");

  const seen = new Set<string>();
  const items: BatchItem[] = [];
  for (const [i, entry] of raw.entries()) {
    if (typeof entry !== "object" || entry === null) {
      throw new ManifestError(`item ${i} is not an object`);
    }
    const it = entry as Record<string, unknown>;
    const id = it.id;
    if (typeof id !== "string" || !/^\d{5}$/.test(id)) {
      throw new ManifestError(`item ${i}: id must be a 5-digit zero-padded string`);
    }
    if (seen.has(id)) throw new ManifestError(`duplicate item id ${id}`);
    seen.add(id);

    const nu = it.nu, nv = it.nv, spacing = it.spacing_mm, window = it.window;
    if (!Number.isInteger(nu) || !Number.isInteger(nv)
        || (nu as number) < 2 || (nv as number) < 2) {
      throw new ManifestError(`item ${id}: nu/nv must be integers >= 2`);
    }
    if (typeof spacing !== "number" || !(spacing > 0)) {
      throw new ManifestError(`item ${id}: spacing_mm must be positive`);
    }
    if (!Array.isArray(window) || window.length !== 2
        || typeof window[0] !== "number" || typeof window[1] !== "number") {
      throw new ManifestError(`item ${id}: window must be [lo, hi]`);
    }
    items.push({
      id,
      nu: nu as number,
      nv: nv as number,
      spacing_mm: spacing,
      window: [window[0], window[1]],
    });
  }
  return items;
}
