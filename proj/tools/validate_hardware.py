#!/usr/bin/env python3
"""Validate hardware files against schema/hardware.xsd.

With --cli, emits every fixture through the CLI first and validates the
results. Exits 77 when the xmlschema package is missing.
"""
import argparse
import pathlib
import subprocess
import sys
import tempfile

try:
    import xmlschema
except ImportError:
    print("xmlschema is not installed; skipping")
    sys.exit(77)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--schema", required=True, type=pathlib.Path)
    parser.add_argument("--cli", type=pathlib.Path, help="autolabs executable")
    parser.add_argument("--fixtures", type=pathlib.Path, help="fixture directory")
    parser.add_argument("files", nargs="*", type=pathlib.Path)
    args = parser.parse_args()

    schema = xmlschema.XMLSchema(str(args.schema))
    files = list(args.files)
    with tempfile.TemporaryDirectory() as tmp:
        if args.cli:
            if not args.fixtures:
                parser.error("--cli needs --fixtures")
            for bundle in sorted(p for p in args.fixtures.iterdir() if (p / "steps.txt").exists()):
                out = pathlib.Path(tmp) / f"{bundle.name}.xml"
                subprocess.run([str(args.cli), "emit", "--steps", str(bundle / "steps.txt"), "-o", str(out)], check=True)
                files.append(out)
        if not files:
            parser.error("nothing to validate")
        failures = 0
        for f in files:
            errors = list(schema.iter_errors(str(f)))
            status = "valid" if not errors else f"INVALID ({errors[0].reason})"
            print(f"{f.name}: {status}")
            failures += bool(errors)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
