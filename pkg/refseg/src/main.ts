/**
 * Batch entry point: `node dist/main.js <io_dir>`.
 *
 * Reads <io_dir>/batch.json plus one 16-bit PGM per item, writes one 8-bit
 * mask PGM per item, exits 0. Any malformed input exits 1 with a message on
 * stderr and no further outputs.
 */

import * as fs from "fs";
import * as path from "path";

import { parseManifest } from "./manifest";
import { decodePgm16, dequantize, encodePgm8 } from "./pgm";
import { oracleLabels } from "./oracle";

export function run(ioDir: string): void {
  const manifestPath = path.join(ioDir, "batch.json");
  if (!fs.existsSync(manifestPath)) {
    throw new Error(`missing manifest: ${manifestPath}`);
  }
  const items = parseManifest(fs.readFileSync(manifestPath, "utf-8"));

  for (const item of items) {
    const imgPath = path.join(ioDir, `${item.id}_img.pgm`);
    if (!fs.existsSync(imgPath)) {
      throw new Error(`missing image for item ${item.id}: ${imgPath}`);
    }
    const img = decodePgm16(fs.readFileSync(imgPath));
    if (img.nu !== item.nu || img.nv !== item.nv) {
      throw new Error(
        `item ${item.id}: PGM is ${img.nu}x${img.nv}, manifest says ` +
        `${item.nu}x${item.nv}`);
    }
    const [lo, hi] = item.window;
    const vals = dequantize(img.codes, lo, hi);
    const labels = oracleLabels(vals, img.nu, img.nv);
    fs.writeFileSync(path.join(ioDir, `${item.id}_mask.pgm`),
                     encodePgm8(img.nu, img.nv, labels));
  }
}

function main(): number {
  const ioDir = process.argv[2];
  if (!ioDir) {
    process.stderr.write("usage: main.js <io_dir>\n");
    return 1;
  }
  try {
    run(ioDir);
  } catch (e) {
    process.stderr.write(`refseg: ${(e as Error).message}\n`);
    return 1;
  }
  return 0;
}

if (require.main === module) {
  process.exit(main());
}
