"""Run ``aif all`` on the bundled fixture and record its output digests.

    python3 scripts/record_golden.py

Writes fixtures/mini/golden_digests.json, which the end-to-end acceptance
test compares against.
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "fixtures" / "mini"


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "aif.cli", "all", "--config", str(FIXTURE / "config.json"),
                        "--seed", "0", "--out", tmp], check=True)
        manifest = json.loads((Path(tmp) / "manifest.json").read_text(encoding="utf-8"))
    golden = {stage: rec["outputs"] for stage, rec in sorted(manifest["stages"].items())}
    (FIXTURE / "golden_digests.json").write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    print(f"recorded {sum(len(v) for v in golden.values())} digests")


if __name__ == "__main__":
    main()
