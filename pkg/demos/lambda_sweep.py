"""
Picking lambda on held-out tuples
=================================

Drives the command-line sweep from Python and prints the summary table.
"""

import csv
import tempfile
from pathlib import Path

from prefopt.cli import main

out = Path(tempfile.mkdtemp()) / "sweep"
main(["sweep", "--num-queries", "10", "--tuples-per-query", "20", "--distribution", "two_cluster(0.1,3.0,0.5)",
      "--method", "sr-ipo", "--steps", "1000", "--holdout-k", "50", "--seed", "0", "--out", str(out)])

with open(out / "sweep_seed0.csv") as fh:
    for row in csv.DictReader(fh):
        print(row["lambda"], row["holdout_accuracy"], row["spearman"])
