"""Run only the acceptance suite and print its PASS/FAIL lines.

    python3 scripts/run_acceptance.py
"""
import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    sys.exit(pytest.main([str(root / "tests" / "test_acceptance.py"), "-q", "-s"]))
