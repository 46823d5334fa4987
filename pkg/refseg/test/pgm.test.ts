import { describe, expect, it } from "vitest";

import { decodePgm16, dequantize, encodePgm8, PgmError } from "../src/pgm";

function makePgm16(nu: number, nv: number, fill: (u: number, v: number) => number): Buffer {
  const header = Buffer.from(`P5\n${nu} ${nv}\n65535\n`, "ascii");
  const body = Buffer.alloc(nu * nv * 2);
  for (let v = 0; v < nv; v++) {
    for (let u = 0; u < nu; u++) {
      body.writeUInt16BE(fill(u, v), (v * nu + u) * 2);
    }
  }
  return Buffer.concat([header, body]);
}

describe("decodePgm16", () => {
  it("reads pixels at (u, v) from row v, column u", () => {
    const buf = makePgm16(3, 2, (u, v) => u * 10 + v);
    const img = decodePgm16(buf);
    expect(img.nu).toBe(3);
    expect(img.nv).toBe(2);
    expect(img.codes[2 * img.nv + 1]).toBe(21); // u=2, v=1
  });

  it("handles header comments", () => {
    const plain = makePgm16(2, 2, () => 7);
    const withComment = Buffer.concat([
      Buffer.from("P5\n# made by a scanner\n2 2\n65535\n", "ascii"),
      plain.subarray(plain.length - 8),
    ]);
    expect(decodePgm16(withComment).codes[0]).toBe(7);
  });

  it("rejects non-P5 and wrong maxval", () => {
    expect(() => decodePgm16(Buffer.from("P2\n2 2\n65535\n0 0 0 0", "ascii")))
      .toThrow(PgmError);
    const eightBit = Buffer.from("P5\n2 2\n255\n\0\0\0\0", "ascii");
    expect(() => decodePgm16(eightBit)).toThrow(/maxval/);
  });

  it("rejects truncated payloads", () => {
    const buf = makePgm16(4, 4, () => 1).subarray(0, 20);
    expect(() => decodePgm16(buf)).toThrow(/truncated/);
  });
});

describe("encodePgm8", () => {
  it("round-trips through the same (u, v) layout", () => {
    const nu = 3, nv = 2;
    const labels = new Uint8Array([0, 1, 2, 0, 1, 2]); // idx = u*nv + v
    const buf = encodePgm8(nu, nv, labels);
    expect(buf.subarray(0, 11).toString("ascii")).toBe("P5\n3 2\n255\n");
    // u=0,v=1 -> row 1, col 0
    expect(buf[11 + 1 * nu + 0]).toBe(labels[0 * nv + 1]);
  });

  it("rejects size mismatch", () => {
    expect(() => encodePgm8(2, 2, new Uint8Array(3))).toThrow(PgmError);
  });
});

describe("dequantize", () => {
  it("inverts the window mapping", () => {
    const codes = new Uint16Array([0, 65535, 32768]);
    const vals = dequantize(codes, 100, 900);
    expect(vals[0]).toBe(100);
    expect(vals[1]).toBe(900);
    expect(vals[2]).toBeCloseTo(100 + (32768 * 800) / 65535, 10);
  });
});
