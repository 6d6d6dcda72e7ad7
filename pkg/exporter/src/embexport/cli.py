"""embexport CLI: export sentence files to MTSS, verify existing files."""

import argparse
import sys

from .exporter import ExportJob, export_embeddings, verify_file
from .mtss_format import FormatError


def cmd_export(args):
    job = ExportJob(input_path=args.input, output_path=args.output,
                    max_len=args.maxlen, model_name=args.model,
                    batch_size=args.batch_size)
    summary = export_embeddings(job, log=lambda m: print(m, file=sys.stderr))
    print(f"wrote {summary['records']} records "
          f"(L={summary['max_len']}, D={summary['dim']}, "
          f"{summary['empty_sentences']} empty) to {summary['output']}")
    return 0


def cmd_verify(args):
    checks = verify_file(args.file, expected_n=args.expect_n,
                         expected_l=args.expect_l, expected_d=args.expect_d)
    width = max(len(name) for name, _, _ in checks)
    failures = 0
    for name, ok, detail in checks:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  "
              f"{detail}".rstrip())
        failures += not ok
    return 2 if failures else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="embexport",
        description="Dump final-layer encoder states into MTSS containers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="encode one sentence file")
    p.add_argument("--input", required=True, help="one sentence per line")
    p.add_argument("--output", required=True, help="MTSS path to write")
    p.add_argument("--maxlen", type=int, required=True,
                   help="subword sequence length incl. special tokens")
    p.add_argument("--model", default="bert-base-uncased",
                   help="model id or local directory")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("verify", help="structural checks on an MTSS file")
    p.add_argument("--file", required=True)
    p.add_argument("--expect-n", type=int)
    p.add_argument("--expect-l", type=int)
    p.add_argument("--expect-d", type=int)
    p.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
