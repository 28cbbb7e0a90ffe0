#!/usr/bin/env python3
"""Generate the shipped 25 node-phase reference feeder and its 24 h scenario.

Loads follow a residential double-peak shape, solar a clear-sky bell with
passing clouds, wind a filtered random walk. Everything is seeded, so the
files are reproducible.
"""

import argparse
import json
import math
from pathlib import Path

import numpy as np

# Phase impedance per mile (ohm) of a 4-wire overhead line and a single-phase lateral.
Z_MAIN = np.array([
    [0.3465 + 1.0179j, 0.1560 + 0.5017j, 0.1580 + 0.4236j],
    [0.1560 + 0.5017j, 0.3375 + 1.0478j, 0.1535 + 0.3849j],
    [0.1580 + 0.4236j, 0.1535 + 0.3849j, 0.3414 + 1.0348j],
])
Z_LATERAL = 1.3292 + 1.3475j

BUSES = [
    ("src", "abc"), ("1", "abc"), ("2", "abc"), ("tf1", "abc"), ("tf2", "abc"),
    ("3", "abc"), ("4", "abc"), ("5", "abc"), ("6", "abc"), ("7", "a"),
]
# (from, to, miles); the tf1-tf2 pair is the transformer and carries no line.
LINES = [
    ("src", "1", 0.8), ("1", "2", 0.9), ("2", "tf1", 0.3),
    ("tf2", "3", 0.6), ("3", "4", 0.9), ("4", "5", 1.0), ("5", "6", 1.1), ("4", "7", 0.7),
]


def cplx(z):
    return [float(z.real), float(z.imag)]


def y_block(z):
    y = np.linalg.inv(np.atleast_2d(z))
    return [[cplx(v) for v in row] for row in y]


def grid_json(tap_step, source_v):
    a = np.exp(-2j * math.pi / 3)
    return {
        "base_mva": 1.0,
        "base_kv": 4.16,
        "buses": [{"id": b, "phases": p} for b, p in BUSES],
        "branches": [
            {"from": f, "to": t, "y_block": y_block(Z_LATERAL * miles if t == "7" else Z_MAIN * miles)}
            for f, t, miles in LINES
        ],
        "source": {"bus": "src", "v": [cplx(source_v + 0j), cplx(source_v * a), cplx(source_v * a * a)]},
        "transformer": {"primary": "tf1", "secondary": "tf2", "tap_min": 0.9, "tap_max": 1.1, "tap_step": tap_step},
    }


def residential(hours, rng):
    base = 0.35 + 0.25 * np.exp(-((hours - 7.5) / 1.3) ** 2) + 0.65 * np.exp(-((hours - 19.0) / 2.0) ** 2)
    return base * (1.0 + 0.05 * rng.standard_normal(hours.size))


def solar(hours, rng):
    bell = np.clip(np.cos((hours - 12.5) / 6.5 * math.pi / 2), 0.0, None) ** 1.5
    bell[(hours < 6.0) | (hours > 19.0)] = 0.0
    clouds = np.ones_like(hours)
    for _ in range(3):
        centre = rng.uniform(9.0, 16.0)
        clouds -= rng.uniform(0.2, 0.5) * np.exp(-((hours - centre) / rng.uniform(0.2, 0.5)) ** 2)
    return np.clip(bell * clouds, 0.0, None)


def wind(steps, rng):
    x = np.empty(steps)
    level = 0.5
    for k in range(steps):
        level = 0.92 * level + 0.08 * 0.45 + 0.09 * rng.standard_normal()
        x[k] = level
    return np.clip(x, 0.0, 1.0)


def scenario_json(args, rng):
    steps = 96
    hours = np.arange(steps) * 0.25
    load_buses = {"1": 0.6, "2": 0.8, "3": 1.0, "4": 1.0, "5": 1.2, "6": 1.1}
    unbalance = {"a": 1.1, "b": 0.9, "c": 1.0}
    loads = []
    for bus, scale in load_buses.items():
        for ph, u in unbalance.items():
            p = args.load_kw / 1000.0 * scale * u * residential(hours, rng)
            loads.append({"bus": bus, "phase": ph, "p": [round(v, 6) for v in p],
                          "q": [round(v * 0.33, 6) for v in p]})
    p7 = args.load_kw / 1000.0 * 0.8 * residential(hours, rng)
    loads.append({"bus": "7", "phase": "a", "p": [round(v, 6) for v in p7], "q": [round(v * 0.33, 6) for v in p7]})

    dg = []
    for bus, rating in (("4", args.solar_kva), ("6", args.solar_kva)):
        shape = solar(hours, rng)
        dg.append({"bus": bus, "phases": "abc", "kind": "solar", "s_max": [round(v * rating / 1000.0, 6) for v in shape],
                   "p_min": 0.0, "q_max_frac": 0.44})
    for bus, rating in (("2", args.wind_kva), ("5", args.wind_kva)):
        shape = wind(steps, rng)
        dg.append({"bus": bus, "phases": "abc", "kind": "wind", "s_max": [round(v * rating / 1000.0, 6) for v in shape],
                   "p_min": 0.0, "q_max_frac": 0.44})

    return {
        "grid": "feeder25.json",
        "horizon": steps,
        "step_minutes": 15,
        "seed": args.seed,
        "case": "with-cov",
        "beta": 0.95,
        "v_min": 0.95,
        "v_max": 1.05,
        "free_source": False,
        "soft_mode": False,
        "pseudo_sigma_frac": args.pseudo_frac,
        "forecast_noise": "gaussian",
        "measurements": [
            {"kind": "voltage-phasor", "bus": "6", "phases": "abc", "sigma": 0.005},
            {"kind": "voltage-magnitude", "bus": "3", "phases": "abc", "sigma": 0.01},
            {"kind": "node-current-phasor", "bus": "5", "phases": "abc", "sigma": 0.02},
            {"kind": "node-current-magnitude", "bus": "1", "phases": "abc", "sigma": 0.02},
            {"kind": "branch-current-phasor", "branch": ["src", "1"], "phases": "abc", "sigma": 0.02},
        ],
        "loads": loads,
        "dg": dg,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--profile-seed", type=int, default=2024)
    ap.add_argument("--load-kw", type=float, default=120.0, help="nominal per-phase load")
    ap.add_argument("--solar-kva", type=float, default=220.0, help="per-phase solar rating")
    ap.add_argument("--wind-kva", type=float, default=120.0, help="per-phase wind rating")
    ap.add_argument("--pseudo-frac", type=float, default=0.5)
    ap.add_argument("--tap-step", type=float, default=0.0025)
    ap.add_argument("--source-v", type=float, default=1.005, help="source voltage magnitude (p.u.)")
    args = ap.parse_args()

    rng = np.random.default_rng(args.profile_seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "feeder25.json").write_text(json.dumps(grid_json(args.tap_step, args.source_v), indent=1) + "\n")
    (args.out / "reference_scenario.json").write_text(json.dumps(scenario_json(args, rng), indent=1) + "\n")


if __name__ == "__main__":
    main()
