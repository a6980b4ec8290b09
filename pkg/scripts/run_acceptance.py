"""Run the acceptance suite and print one [PASS]/[FAIL] line per criterion."""
import subprocess
import sys
from pathlib import Path

root = Path(__file__).resolve().parents[1]
raise SystemExit(subprocess.call([sys.executable, "-m", "pytest", "-q", str(root / "tests" / "test_acceptance.py"),
                                  *sys.argv[1:]], cwd=root))
