"""Published energy rows, and the energy report of a distilled student.

    python3 scripts/energy_check.py [run_dir]
"""

import json
import os
import sys

from spikekour import energy as en
from spikekour.pipeline import load_policy


def main():
    print(json.dumps(en.paper_check(), indent=2))
    if len(sys.argv) > 1:
        run = sys.argv[1]
        student = load_policy(os.path.join(run, "student_events.ckpt"), expect="student")
        with open(os.path.join(run, "student_events_stats.json")) as fh:
            stats = json.load(fh)
        print(en.dumps(en.energy_report(student.spec, stats)))


if __name__ == "__main__":
    main()
