#!/usr/bin/env python3
"""Generate the bundled synthetic 118-bus case.

Two rings (60 + 40 buses) joined by five ties, with 18 spur buses hung
off the rings. Twelve PV units carry the conventional dispatch and
twelve wind/solar units sit on PQ buses. Regenerating with the same
seed reproduces the committed file byte for byte.
"""

import math
import sys
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "rmss" / "cases" / "case118_stoch.m"

PV_BUSES = {5: 1.02, 12: 1.01, 20: 1.0, 28: 1.01, 36: 1.0, 44: 1.02,
            52: 1.0, 66: 1.01, 74: 1.0, 82: 1.02, 90: 1.0, 98: 1.01}
PV_PG = {5: 70, 12: 55, 20: 60, 28: 50, 36: 65, 44: 55, 52: 60, 66: 70,
         74: 55, 82: 65, 90: 60, 98: 55}
# (bus, fuel); all spur or ring PQ buses
RENEWABLES = [(101, "wind"), (103, "solar"), (105, "wind"), (107, "solar"),
              (109, "wind"), (111, "solar"), (113, "wind"), (115, "solar"),
              (117, "wind"), (33, "solar"), (57, "wind"), (87, "solar")]
TIES = [(10, 70, 1.0, 0.0), (20, 80, 1.02, 0.0), (30, 90, 1.0, 1.0),
        (40, 100, 1.0, 0.0), (50, 61, 0.98, 0.0)]  # (f, t, tap, shift_deg)
SPUR_PARENTS = {101: 3, 102: 101, 103: 8, 104: 103, 105: 17, 106: 105,
                107: 23, 108: 107, 109: 38, 110: 109, 111: 47, 112: 111,
                113: 63, 114: 113, 115: 77, 116: 115, 117: 93, 118: 117}


def build():
    rng = np.random.default_rng(118)
    n = 118
    slack = 1

    branches = []  # (f, t, r, x, b, tap, shift_deg)

    def line(f, t, x_lo, x_hi, b_chg):
        x = round(float(rng.uniform(x_lo, x_hi)), 4)
        r = round(x / 8.0, 4)
        branches.append((f, t, r, x, b_chg, 0.0, 0.0))

    for i in range(1, 61):
        line(i, i % 60 + 1, 0.04, 0.09, 0.02)
    for i in range(61, 101):
        line(i, 61 + (i - 60) % 40, 0.05, 0.12, 0.02)
    for f, t, tap, shift in TIES:
        x = round(float(rng.uniform(0.06, 0.12)), 4)
        branches.append((f, t, round(x / 10.0, 4), x, 0.01, tap, shift))
    for spur, parent in SPUR_PARENTS.items():
        line(parent, spur, 0.08, 0.16, 0.01)

    load_p = {}
    load_q = {}
    for bus in range(1, n + 1):
        if bus == slack or bus in PV_BUSES:
            continue
        if rng.random() < 0.75:
            p = round(float(rng.uniform(6.0, 20.0)), 1)
            q = round(p * float(rng.uniform(0.15, 0.3)), 1)
            load_p[bus], load_q[bus] = p, q

    gens = [(slack, 100.0, 0.0, 1.03, "ng")]
    gens += [(bus, float(PV_PG[bus]), 0.0, PV_BUSES[bus], "ng") for bus in sorted(PV_BUSES)]
    for bus, fuel in RENEWABLES:
        gens.append((bus, round(float(rng.uniform(10.0, 24.0)), 1), 0.0, 1.0, fuel))

    total_load = sum(load_p.values())
    total_gen = sum(g[1] for g in gens[1:])
    print(f"load {total_load:.1f} MW, non-slack gen {total_gen:.1f} MW, "
          f"slack picks up {total_load - total_gen:.1f} MW + losses")

    lines = [
        "function mpc = case118_stoch",
        "% Synthetic 118-bus network: a 60-bus and a 40-bus ring joined by",
        "% five ties (two off-nominal taps, one phase shifter), with 18 spur",
        "% buses. Twelve wind/solar units on PQ buses are the stochastic",
        "% resources. Generated by scripts/gen_case118.py (seed 118).",
        "mpc.version = '2';",
        "mpc.baseMVA = 100;",
        "",
        "% id type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin",
        "mpc.bus = [",
    ]
    for bus in range(1, n + 1):
        if bus == slack:
            kind, vm = 3, 1.03
        elif bus in PV_BUSES:
            kind, vm = 2, PV_BUSES[bus]
        else:
            kind, vm = 1, 1.0
        pd, qd = load_p.get(bus, 0.0), load_q.get(bus, 0.0)
        lines.append(f"  {bus} {kind} {pd} {qd} 0 0 1 {vm} 0 135 1 1.06 0.94;")
    lines.append("];")

    lines += ["", "% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for bus, pg, qg, vg, _fuel in gens:
        lines.append(f"  {bus} {pg} {qg} 999 -999 {vg} 100 1 999 -999;")
    lines.append("];")

    lines += ["", "% fbus tbus r x b rateA rateB rateC ratio angle status", "mpc.branch = ["]
    for f, t, r, x, b, tap, shift in branches:
        lines.append(f"  {f} {t} {r} {x} {b} 0 0 0 {tap} {shift} 1;")
    lines.append("];")

    lines += ["", "mpc.genfuel = {"]
    for *_rest, fuel in gens:
        lines.append(f"  '{fuel}';")
    lines.append("};")

    OUT.write_text("\n".join(lines) + "\n")
    print(f"wrote {OUT}")


def check():
    sys.path.insert(0, str(OUT.parents[2]))  # src/ layout
    from rmss import parse_case, solve_power_flow, write_case, tag_essential
    from rmss.model import case_fields_equal

    case = parse_case(OUT)
    sol = solve_power_flow(case)
    vmag = np.abs(sol.v)
    print(f"converged={sol.converged} iters={sol.iterations} "
          f"|V| in [{vmag.min():.4f}, {vmag.max():.4f}]")
    assert sol.converged

    tmp = OUT.parent / "_roundtrip_check.m"
    write_case(case, tmp)
    again = parse_case(tmp)
    tmp.unlink()
    print("round-trip field equality:", case_fields_equal(case, again))

    tagged = tag_essential(case, "all-renewable")
    print("renewables:", [c.id for c in tagged.essential_components()])

    # sanity: phase-shift degree/radian round trip must be exact
    for _f, _t, _tap, shift_deg in TIES:
        assert math.degrees(math.radians(shift_deg)) == shift_deg, shift_deg


if __name__ == "__main__":
    build()
    check()
