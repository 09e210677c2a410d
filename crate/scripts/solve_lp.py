#!/usr/bin/env python3
"""Solve LP files with HiGHS and write `name value` solution files.

Usage: solve_lp.py MODEL.lp [MODEL.lp ...]

Each MODEL.lp produces MODEL.sol next to it. The first line records the
SHA-256 of the model text so stale solutions can be detected. Only T and the
s_i are written; they are all that is needed to extract a start order.
"""
import hashlib
import re
import sys

import highspy

KEEP = re.compile(r"^(T|s_\d+)$")


def solve(path):
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("random_seed", 0)
    if h.readModel(path) != highspy.HighsStatus.kOk:
        raise SystemExit(f"{path}: could not read model")
    h.run()
    if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
        raise SystemExit(f"{path}: {h.modelStatusToString(h.getModelStatus())}")
    lp = h.getLp()
    values = h.getSolution().col_value
    out = path[:-3] + ".sol" if path.endswith(".lp") else path + ".sol"
    with open(path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    with open(out, "w") as f:
        f.write(f"# lp-sha256 {digest}\n")
        f.write(f"# objective {h.getInfo().objective_function_value!r}\n")
        for name, value in sorted(zip(lp.col_names_, values)):
            if KEEP.match(name):
                f.write(f"{name} {value!r}\n")
    return out


if __name__ == "__main__":
    if len(sys.argv) < 2:
        raise SystemExit(__doc__)
    for p in sys.argv[1:]:
        print(solve(p))
