export { ExportError } from "./errors.js";
export {
  FORMAT_VERSION,
  MAGIC,
  packMatrix,
  readDupx,
  sha256,
  unpackMatrix,
  writeDupx,
} from "./dupx.js";
export type { DupxMatrix } from "./dupx.js";
export { decodePpm } from "./ppm.js";
export type { RgbImage } from "./ppm.js";
export { resizeBilinear, TARGET_SIZE } from "./image.js";
export { createBackbone } from "./backbone.js";
export type { Backbone } from "./backbone.js";
export { runExport, SPLITS } from "./exporter.js";
export type { ExportJob, ExportResult, Split } from "./exporter.js";
