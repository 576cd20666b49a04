/** Structured failure with a machine-parseable kind, mirroring the trainer's
 * `error=<kind> detail=<message>` stderr contract. */
export class ExportError extends Error {
  kind: string;

  constructor(kind: string, detail: string) {
    super(detail);
    this.kind = kind;
  }
}
