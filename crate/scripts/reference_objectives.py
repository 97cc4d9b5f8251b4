#!/usr/bin/env python3
"""Compute AC-OPF reference objectives for the bundled MATPOWER cases.

Uses PYPOWER's interior-point AC-OPF (a port of MATPOWER's `runopf`) as an
independent nonlinear solver. The output is the TOML fixture consumed by the
gap computation (`crates/core/data/reference_objectives.toml`).

    pip install pypower
    python3 scripts/reference_objectives.py > crates/core/data/reference_objectives.toml
"""
import math
import re
import sys
from pathlib import Path

import numpy as np
import pypower.pipsopf_solver as _pips_solver
from pypower.api import ppoption, runopf
from pypower.opf_consfcn import opf_consfcn as _opf_consfcn


def _consfcn_flat(*args, **kwargs):
    # PYPOWER returns a (0, 1) array when no branch limits are present,
    # which newer numpy refuses to concatenate with the linear rows.
    h, g, dh, dg = _opf_consfcn(*args, **kwargs)
    return np.ravel(h), g, dh, dg


_pips_solver.opf_consfcn = _consfcn_flat

CASES = ["case9", "case14", "case22", "case33bw", "case39", "case69", "case141"]
DATA = Path(__file__).resolve().parent.parent / "crates" / "core" / "data" / "cases"


def strip_comment(line):
    out = []
    in_str = False
    for ch in line:
        if ch == "'":
            in_str = not in_str
        if ch == "%" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def load_case(path):
    text = path.read_text()
    ppc = {}
    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)", text)
    ppc["baseMVA"] = float(m.group(1))
    for name in ["bus", "gen", "branch", "gencost"]:
        m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % name, text, re.S)
        rows = []
        for raw in m.group(1).split("\n"):
            line = strip_comment(raw)
            for chunk in line.split(";"):
                vals = chunk.split()
                if vals:
                    rows.append([float(v) for v in vals])
        ppc[name] = np.array(rows)
    ppc["version"] = "2"
    # PYPOWER mishandles cases without any limited branch; a non-binding
    # limit (1e5 MVA) stands in for "unlimited".
    rate = ppc["branch"][:, 5]
    rate[rate == 0] = 1e5
    # post-processing blocks present in the distribution feeders
    if "convert branch impedances from Ohms" in text:
        vbase = ppc["bus"][0, 9] * 1e3
        sbase = ppc["baseMVA"] * 1e6
        ppc["branch"][:, 2:4] /= vbase**2 / sbase
    if "convert loads from kW to MW" in text:
        ppc["bus"][:, 2:4] /= 1e3
    m = re.search(r"^pf\s*=\s*([0-9.]+);", text, re.M)
    if m:
        pf = float(m.group(1))
        ppc["bus"][:, 3] = ppc["bus"][:, 2] * math.sin(math.acos(pf))
        ppc["bus"][:, 2] = ppc["bus"][:, 2] * pf
    return ppc


def main():
    opt = ppoption(VERBOSE=0, OUT_ALL=0, OPF_VIOLATION=1e-8, PDIPM_GRADTOL=1e-10,
                   PDIPM_COMPTOL=1e-10, PDIPM_COSTTOL=1e-12)
    print("# AC-OPF reference objectives ($/h) for the bundled MATPOWER cases.")
    print("# Generated by scripts/reference_objectives.py with PYPOWER runopf")
    print("# (primal-dual interior point, MATPOWER-equivalent AC model).")
    print()
    for name in CASES:
        res = runopf(load_case(DATA / f"{name}.m"), opt)
        if not res["success"]:
            print(f"{name}: runopf failed", file=sys.stderr)
            sys.exit(1)
        # PYPOWER's own `f` is zero for purely linear polynomial costs, so the
        # objective is re-evaluated from the optimal dispatch.
        cost = res["gencost"]
        assert np.all(cost[:, 0] == 2), "only polynomial costs are bundled"
        f = sum(
            np.polyval(row[4:4 + int(row[3])], pg)
            for row, pg in zip(cost, res["gen"][:, 1])
        )
        print(f"[{name}]")
        print(f"objective = {f:.10g}")
        print('source = "PYPOWER 5.1 runopf (MATPOWER AC-OPF port), tightened tolerances"')
        print()


if __name__ == "__main__":
    main()
