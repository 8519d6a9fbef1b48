"""Run every built-in example through the command-line front end.

Usage: python scripts/fixture_report.py [paths]
"""
import io
import json
import sys
from contextlib import redirect_stdout

from volterra_asym.cli import main
from volterra_asym.fixtures import FIXTURES

if __name__ == "__main__":
    paths = sys.argv[1] if len(sys.argv) > 1 else "1000"
    worst = 0
    for name in sorted(FIXTURES):
        buf = io.StringIO()
        with redirect_stdout(buf):
            code = main(["fixture", name, "--paths", paths])
        report = json.loads(buf.getvalue())
        worst = max(worst, code)
        print(f"{name}: exit {code}, matches reference: {report.get('matches_reference')}")
    sys.exit(worst)
