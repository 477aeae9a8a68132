#!/usr/bin/env python3
"""Regenerates the grid fixtures under data/fixtures/.

All outputs are deterministic; rerunning produces byte-identical files.
"""
import json
import math
import random
import sys
from pathlib import Path


def adm(z_r, z_x):
    """Series admittance {g, b} from an impedance r + jx."""
    d = z_r * z_r + z_x * z_x
    return {"g": z_r / d, "b": -z_x / d}


def shunt(b_total):
    return {"g": 0.0, "b": b_total / 2.0}


def zero():
    return {"g": 0.0, "b": 0.0}


def line(f, t, r, x, b=0.0, tap=1.0, smax=2.0, ang=0.6):
    return {
        "from": f, "to": t,
        "y_series": adm(r, x),
        "y_shunt_from": shunt(b) if b else zero(),
        "y_shunt_to": shunt(b) if b else zero(),
        "tap_ratio": tap, "s_max_pu": smax,
        "angle_diff_min_rad": -ang, "angle_diff_max_rad": ang,
    }


def bus(i, name, kv, vmin=0.94, vmax=1.06):
    return {"id": i, "name": name, "vn_kv": kv, "v_min_pu": vmin, "v_max_pu": vmax}


def two_bus():
    return {
        "base_mva": 100.0,
        "buses": [bus(0, "slack", 150.0), bus(1, "load", 150.0)],
        "lines": [{
            "from": 0, "to": 1,
            "y_series": {"g": 0.0, "b": -10.0},
            "y_shunt_from": zero(), "y_shunt_to": zero(),
            "tap_ratio": 1.0, "s_max_pu": 5.0,
            "angle_diff_min_rad": -1.0, "angle_diff_max_rad": 1.0,
        }],
        "volt_gens": [{"bus": 0, "q_min_pu": -5.0, "q_max_pu": 5.0, "is_slack": True,
                       "vset_min_pu": 1.0, "vset_max_pu": 1.0}],
        "stat_gens": [], "loads": [{"bus": 1}], "compensators": [],
    }


def three_bus():
    """Slack, one voltage-controlling generator, one compensator, one load."""
    return {
        "base_mva": 100.0,
        "buses": [bus(0, "slack", 150.0, 0.94, 1.06),
                  bus(1, "gen", 150.0, 0.94, 1.06),
                  bus(2, "load", 150.0, 0.94, 1.06)],
        "lines": [line(0, 1, 0.02, 0.10, 0.04, smax=3.0),
                  line(1, 2, 0.03, 0.12, 0.04, smax=3.0),
                  line(0, 2, 0.04, 0.15, 0.04, smax=3.0)],
        "volt_gens": [
            {"bus": 0, "q_min_pu": -3.0, "q_max_pu": 3.0, "is_slack": True},
            {"bus": 1, "q_min_pu": -0.6, "q_max_pu": 0.6, "is_slack": False},
        ],
        "stat_gens": [], "loads": [{"bus": 2}],
        "compensators": [{"bus": 2, "q_min_pu": -0.3, "q_max_pu": 0.6}],
    }


def three_bus_tight():
    """Three-bus variant where the load voltage and generator limits bind."""
    g = three_bus()
    g["buses"][2]["v_max_pu"] = 1.0
    g["volt_gens"][1]["q_max_pu"] = 0.15
    g["compensators"][0] = {"bus": 2, "q_min_pu": -0.2, "q_max_pu": 0.25}
    return g


def one_comp():
    """Pinned slack and a single compensator: a one-dimensional control space."""
    return {
        "base_mva": 100.0,
        "buses": [bus(0, "slack", 150.0), bus(1, "mid", 150.0), bus(2, "load", 150.0)],
        "lines": [line(0, 1, 0.02, 0.08, 0.02, smax=3.0),
                  line(1, 2, 0.03, 0.10, 0.02, smax=3.0)],
        "volt_gens": [{"bus": 0, "q_min_pu": -3.0, "q_max_pu": 3.0, "is_slack": True,
                       "vset_min_pu": 1.02, "vset_max_pu": 1.02}],
        "stat_gens": [], "loads": [{"bus": 2}],
        "compensators": [{"bus": 2, "q_min_pu": -0.5, "q_max_pu": 0.8}],
    }


# Branch data of the IEEE 14-bus case (r, x, b, tap), 0-indexed buses.
IEEE14_BRANCHES = [
    (0, 1, 0.01938, 0.05917, 0.0528, 1.0), (0, 4, 0.05403, 0.22304, 0.0492, 1.0),
    (1, 2, 0.04699, 0.19797, 0.0438, 1.0), (1, 3, 0.05811, 0.17632, 0.0340, 1.0),
    (1, 4, 0.05695, 0.17388, 0.0346, 1.0), (2, 3, 0.06701, 0.17103, 0.0128, 1.0),
    (3, 4, 0.01335, 0.04211, 0.0, 1.0), (3, 6, 0.0, 0.20912, 0.0, 0.978),
    (3, 8, 0.0, 0.55618, 0.0, 0.969), (4, 5, 0.0, 0.25202, 0.0, 0.932),
    (5, 10, 0.09498, 0.19890, 0.0, 1.0), (5, 11, 0.12291, 0.25581, 0.0, 1.0),
    (5, 12, 0.06615, 0.13027, 0.0, 1.0), (6, 7, 0.0, 0.17615, 0.0, 1.0),
    (6, 8, 0.0, 0.11001, 0.0, 1.0), (8, 9, 0.03181, 0.08450, 0.0, 1.0),
    (8, 13, 0.12711, 0.27038, 0.0, 1.0), (9, 10, 0.08205, 0.19207, 0.0, 1.0),
    (11, 12, 0.22092, 0.19988, 0.0, 1.0), (12, 13, 0.17093, 0.34802, 0.0, 1.0),
]


def small14():
    """IEEE 14-bus topology with a pinned slack and five free controls."""
    kv = [132.0] * 5 + [33.0] * 9
    buses = [bus(i, f"b{i + 1}", kv[i], 0.94, 1.08) for i in range(14)]
    lines = [line(f, t, r, x, b, tap, smax=2.0, ang=0.6) for f, t, r, x, b, tap in IEEE14_BRANCHES]
    vgens = [
        {"bus": 0, "q_min_pu": -1.0, "q_max_pu": 1.5, "is_slack": True,
         "vset_min_pu": 1.04, "vset_max_pu": 1.04},
        {"bus": 1, "q_min_pu": -0.4, "q_max_pu": 0.5, "is_slack": False},
        {"bus": 2, "q_min_pu": -0.2, "q_max_pu": 0.4, "is_slack": False},
        {"bus": 5, "q_min_pu": -0.15, "q_max_pu": 0.3, "is_slack": False},
    ]
    return {
        "base_mva": 100.0, "buses": buses, "lines": lines, "volt_gens": vgens,
        "stat_gens": [{"bus": 7}, {"bus": 12}],
        "loads": [{"bus": b} for b in (1, 2, 3, 4, 5, 8, 9, 10, 11, 12, 13)],
        "compensators": [{"bus": 8, "q_min_pu": -0.1, "q_max_pu": 0.35},
                         {"bus": 13, "q_min_pu": -0.1, "q_max_pu": 0.2}],
    }


def uruguay_shaped():
    """107 buses (12 at 500 kV, 95 at 150 kV), 156 branches (14 + 130 lines and
    12 transformers), 15 voltage-controlling and 27 static generators, 55 loads,
    6 compensators. Topology and parameters are synthetic."""
    rng = random.Random(20250107)
    n500, n150 = 12, 95
    buses = [bus(i, f"N{i:02d}", 500.0, 0.95, 1.05) for i in range(n500)]
    buses += [bus(n500 + k, f"N{k:02d}" if k < n500 else f"S{k:02d}", 150.0, 0.93, 1.07)
              for k in range(n150)]
    lines = []
    # 500 kV ring plus two chords.
    for i in range(n500):
        lines.append(line(i, (i + 1) % n500, 0.0015, 0.018, 0.9, smax=12.0, ang=0.7))
    lines.append(line(0, 6, 0.002, 0.025, 1.2, smax=12.0, ang=0.7))
    lines.append(line(3, 9, 0.002, 0.025, 1.2, smax=12.0, ang=0.7))
    # Transformers to the 150 kV bus of the same name.
    for i in range(n500):
        lines.append(line(i, n500 + i, 0.0005, 0.02, 0.0, tap=1.0, smax=8.0, ang=0.7))
    # 150 kV network: a random spanning tree grown from the transformer buses.
    edges = set()
    attached = list(range(n500, 2 * n500))
    for k in range(2 * n500, n500 + n150):
        parent = attached[rng.randrange(len(attached))]
        edges.add((parent, k))
        attached.append(k)
    while len(edges) < 130:
        a, b = rng.sample(range(n500, n500 + n150), 2)
        e = (min(a, b), max(a, b))
        if e not in edges and (e[1], e[0]) not in edges:
            edges.add(e)
    for a, b in sorted(edges):
        x = rng.uniform(0.02, 0.09)
        lines.append(line(a, b, 0.2 * x, x, 0.02, smax=3.0, ang=0.6))

    bus150 = list(range(n500, n500 + n150))
    order = bus150[:]
    rng.shuffle(order)
    vgen_buses = [0] + sorted(order[:14])
    sgen_buses = sorted(order[14:41])
    rest = sorted(order[41:])
    load_buses = sorted(rng.sample(bus150, 55))
    comp_buses = sorted(rng.sample(rest, 6))
    vgens = []
    for b in vgen_buses:
        g = {"bus": b, "q_min_pu": -1.0, "q_max_pu": 1.5, "is_slack": b == 0}
        if b == 0:
            g.update({"q_min_pu": -10.0, "q_max_pu": 10.0, "vset_min_pu": 1.02, "vset_max_pu": 1.02})
        vgens.append(g)
    return {
        "base_mva": 100.0, "buses": buses, "lines": lines, "volt_gens": vgens,
        "stat_gens": [{"bus": b} for b in sgen_buses],
        "loads": [{"bus": b} for b in load_buses],
        "compensators": [{"bus": b, "q_min_pu": -0.5, "q_max_pu": 0.5} for b in comp_buses],
    }


SMALL14_NOMINAL = {
    "load": {1: (21.7, 12.7), 2: (94.2, 19.0), 3: (47.8, -3.9), 4: (7.6, 1.6), 5: (11.2, 7.5),
             8: (29.5, 16.6), 9: (9.0, 5.8), 10: (3.5, 1.8), 11: (6.1, 1.6), 12: (13.5, 5.8),
             13: (14.9, 5.0)},
    "sgen": {7: (15.0, 2.0), 12: (10.0, 1.0)},
    "vgen": {1: 40.0, 2: 20.0, 5: 10.0},
}


def nominal_csv(nominal):
    """One-row batch file in physical units."""
    cols, vals = [], []
    for b, (p, q) in sorted(nominal["load"].items()):
        cols += [f"load_{b}_p", f"load_{b}_q"]
        vals += [p, q]
    for b, (p, q) in sorted(nominal["sgen"].items()):
        cols += [f"sgen_{b}_p", f"sgen_{b}_q"]
        vals += [p, q]
    for b, p in sorted(nominal["vgen"].items()):
        cols.append(f"vgen_{b}_p")
        vals.append(p)
    lines = ["# units: p=MW, q=MVar", "timestamp," + ",".join(cols),
             "2021-01-01T00:00:00," + ",".join(repr(v) for v in vals)]
    return "\n".join(lines) + "\n"


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fixtures = {
        "two_bus.json": two_bus(),
        "three_bus.json": three_bus(),
        "three_bus_tight.json": three_bus_tight(),
        "one_comp.json": one_comp(),
        "small14.json": small14(),
        "uruguay107.json": uruguay_shaped(),
    }
    for name, doc in fixtures.items():
        (out / name).write_text(json.dumps(doc, indent=2) + "\n")
    (out / "small14_nominal.csv").write_text(nominal_csv(SMALL14_NOMINAL))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "fixtures")
