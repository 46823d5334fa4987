/**
 * Binary PGM (P5) codec for the segmentation exchange protocol.
 *
 * Images travel as 16-bit big-endian PGM (window-quantized intensities),
 * masks come back as 8-bit PGM with values {0, 1, 2}. Pixel (u, v) of the
 * logical (nu, nv) image sits at PGM row v, column u.
 */

export interface Image16 {
  nu: number;
  nv: number;
  /** codes[u * nv + v], 0..65535 */
  codes: Uint16Array;
}

export class PgmError extends Error {}

function parseHeader(buf: Buffer): { fields: string[]; offset: number } {
  const fields: string[] = [];
  let pos = 0;
  while (fields.length < 4) {
    while (pos < buf.length && isSpace(buf[pos])) pos++;
    if (pos >= buf.length) throw new PgmError("truncated PGM header");
    if (buf[pos] === 0x23) {
      // '#' comment runs to end of line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    const start = pos;
    while (pos < buf.length && !isSpace(buf[pos])) pos++;
    fields.push(buf.subarray(start, pos).toString("ascii"));
  }
  // exactly one whitespace byte separates the maxval from the payload
  return { fields, offset: pos + 1 };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

export function decodePgm16(buf: Buffer): Image16 {
  const { fields, offset } = parseHeader(buf);
  if (fields[0] !== "P5") throw new PgmError("not a binary PGM (P5)");
  const nu = parseInt(fields[1], 10);
  const nv = parseInt(fields[2], 10);
  const maxval = parseInt(fields[3], 10);
  if (!(nu > 0 && nv > 0)) throw new PgmError(`bad PGM dimensions ${nu}x${nv}`);
  if (maxval !== 65535) throw new PgmError("image PGM maxval must be 65535");
  const need = nu * nv * 2;
  if (buf.length - offset < need) throw new PgmError("truncated PGM payload");
  const codes = new Uint16Array(nu * nv);
  for (let v = 0; v < nv; v++) {
    for (let u = 0; u < nu; u++) {
      codes[u * nv + v] = buf.readUInt16BE(offset + (v * nu + u) * 2);
    }
  }
  return { nu, nv, codes };
}

export function encodePgm8(nu: number, nv: number, labels: Uint8Array): Buffer {
  if (labels.length !== nu * nv) throw new PgmError("label buffer size mismatch");
  const header = Buffer.from(`P5\n${nu} ${nv}\n255\n`, "ascii");
  const body = Buffer.alloc(nu * nv);
  for (let v = 0; v < nv; v++) {
    for (let u = 0; u < nu; u++) {
      body[v * nu + u] = labels[u * nv + v];
    }
  }
  return Buffer.concat([header, body]);
}

/** Invert the recorded window mapping back to intensity values. */
export function dequantize(codes: Uint16Array, lo: number, hi: number): Float64Array {
  const vals = new Float64Array(codes.length);
  for (let i = 0; i < codes.length; i++) {
    vals[i] = lo + (codes[i] * (hi - lo)) / 65535.0;
  }
  return vals;
}
