#!/usr/bin/env python3
"""Run every leica subcommand on a small synthetic corpus and validate each
JSON report against the report schema."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def main() -> int:
    if len(sys.argv) != 3:
        print("usage: validate_reports.py LEICA_BINARY SCHEMA", file=sys.stderr)
        return 2
    leica, schema_path = sys.argv[1], Path(sys.argv[2])
    schema = json.loads(schema_path.read_text())
    validator = jsonschema.Draft202012Validator(schema)

    with tempfile.TemporaryDirectory(prefix="leica-schema-") as tmp:
        data = Path(tmp) / "data"
        manifest = str(data / "manifest.jsonl")
        lexicon = str(data / "lexicon.txt")
        models = ["--models", str(data)]
        runs = [
            ["synth", "--out", str(data), "--count", "16", "--seed", "2"],
            ["score", "--manifest", manifest, *models],
            ["score", "--manifest", manifest, *models, "--ablate-h", "--ablate-s"],
            ["metaeval", "--manifest", manifest, *models, "--mismatch"],
            ["metaeval", "--manifest", manifest, *models, "--kind", "gb", "--degree", "2"],
            ["metaeval", "--manifest", manifest, *models, "--replace", "1", "--lexicon", lexicon],
            ["metaeval", "--manifest", manifest, *models, "--noised", manifest],
            ["metaeval", "--manifest", manifest, *models, "--ladder", "spn", "--degrees", "0.1", "--repeats", "2"],
            ["metaeval", "--manifest", manifest, *models, "--ladder", "replace", "--lexicon", lexicon,
             "--degrees", "0,2", "--repeats", "2"],
            ["perturb", "--in", manifest, "--out", str(Path(tmp) / "noisy"), "--kind", "gn+", "--degree", "0.05"],
            ["rank", "clean=" + manifest, *models],
            ["stability", "--manifest", manifest, *models, "--sizes", "4,8", "--repeats", "3"],
        ]
        failures = 0
        for args in runs:
            proc = subprocess.run([leica, *args], capture_output=True, text=True)
            label = " ".join(args[:1] + [a for a in args[1:] if a.startswith("--") and a != "--models"])
            if proc.returncode != 0:
                print(f"FAIL {label}: exit {proc.returncode}: {proc.stderr.strip()}")
                failures += 1
                continue
            report = json.loads(proc.stdout)
            errors = sorted(validator.iter_errors(report), key=lambda e: list(e.path))
            if errors:
                failures += 1
                for e in errors[:5]:
                    print(f"FAIL {label}: {'/'.join(map(str, e.path))}: {e.message}")
            else:
                print(f"ok   {label}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
