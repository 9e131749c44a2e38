#!/usr/bin/env python3
"""Regenerates the JSON fixtures in this directory.

The numbers are frozen into the repository; this script documents how they
were produced and allows regeneration if the schema evolves.
"""
import json
import math
import random
from pathlib import Path

HERE = Path(__file__).parent


def r4(x):
    return round(x, 4)


def cost(**kw):
    return kw


def two_bus():
    K = 4
    return {
        "name": "2bus",
        "base_mva": 1.0,
        "horizon": {"steps": K, "dt_hours": 1.0},
        "buses": [
            {"id": "root", "phases": ["a"], "vmin_pu": 0.90, "vmax_pu": 1.10, "is_root": True},
            {"id": "b1", "phases": ["a"], "vmin_pu": 0.90, "vmax_pu": 1.10},
        ],
        "branches": [
            {"id": "br01", "from": "root", "to": "b1", "phases": ["a"],
             "r_pu": [[0.01]], "x_pu": [[0.02]], "smax": 5.0},
        ],
        "devices": [
            {"id": "dg0", "bus": "root", "kind": "dg", "smax": 2.0,
             "cost": cost(p=1.0, reserve=0.05)},
            {"id": "pv1", "bus": "b1", "kind": "pv", "smax": 1.0,
             "cost": cost(curtail_p=10.0, reserve=0.02)},
            {"id": "ld1", "bus": "b1", "kind": "load",
             "cost": cost(curtail_p=100.0, curtail_q=100.0, reserve=0.5)},
        ],
        "forecasts": {
            "pv1": {"p": [0.3] * K, "q": [0.0] * K},
            "ld1": {"p": [0.6] * K, "q": [0.2] * K},
        },
    }


def four_bus():
    K = 48
    shape = [max(0.0, math.sin(math.pi * k / 32.0)) for k in range(K)]
    return {
        "name": "4bus",
        "base_mva": 1.0,
        "horizon": {"steps": K, "dt_hours": 0.25},
        "buses": [
            {"id": "root", "phases": ["a"], "vmin_pu": 0.90, "vmax_pu": 1.10, "is_root": True},
            {"id": "b1", "phases": ["a"], "vmin_pu": 0.90, "vmax_pu": 1.10},
            {"id": "b2", "phases": ["a"], "vmin_pu": 0.90, "vmax_pu": 1.10},
            {"id": "b3", "phases": ["a"], "vmin_pu": 0.90, "vmax_pu": 1.10},
        ],
        "branches": [
            {"id": "br01", "from": "root", "to": "b1", "phases": ["a"],
             "r_pu": [[0.008]], "x_pu": [[0.016]], "smax": 4.0},
            {"id": "br12", "from": "b1", "to": "b2", "phases": ["a"],
             "r_pu": [[0.01]], "x_pu": [[0.02]], "smax": 3.0},
            {"id": "br13", "from": "b1", "to": "b3", "phases": ["a"],
             "r_pu": [[0.01]], "x_pu": [[0.02]], "smax": 3.0},
        ],
        "devices": [
            {"id": "dg0", "bus": "root", "kind": "dg", "smax": 2.5,
             "cost": cost(p=1.0, reserve=0.05)},
            {"id": "dg3", "bus": "b3", "kind": "dg", "smax": 1.5,
             "cost": cost(p=1.3, reserve=0.05)},
            {"id": "pv1", "bus": "b1", "kind": "pv", "smax": 1.5,
             "cost": cost(curtail_p=10.0, reserve=0.02)},
            {"id": "pv3", "bus": "b3", "kind": "pv", "smax": 1.0,
             "cost": cost(curtail_p=10.0, reserve=0.02)},
            {"id": "batt2", "bus": "b2", "kind": "storage", "smax": 1.2,
             "pmax": 1.0, "emin": 0.3, "emax": 3.0, "e0": 1.8, "eta": 0.95,
             "cost": cost(cycle=0.01, reserve=0.05)},
            {"id": "ld1", "bus": "b1", "kind": "load",
             "cost": cost(curtail_p=100.0, curtail_q=100.0, reserve=0.5)},
            {"id": "ld2", "bus": "b2", "kind": "load",
             "cost": cost(curtail_p=100.0, curtail_q=100.0, reserve=0.5)},
            {"id": "ld3", "bus": "b3", "kind": "load",
             "cost": cost(curtail_p=100.0, curtail_q=100.0, reserve=0.5)},
        ],
        "forecasts": {
            "pv1": {"p": [r4(1.3 * s) for s in shape], "q": [0.0] * K},
            "pv3": {"p": [r4(0.8 * s) for s in shape], "q": [0.0] * K},
            "ld1": {"p": [0.55] * K, "q": [0.18] * K},
            "ld2": {"p": [0.75] * K, "q": [0.25] * K},
            "ld3": {"p": [0.5] * K, "q": [0.16] * K},
        },
    }


def four_bus_profile(name, pv1_amp, pv3_amp, loads, batt_e0):
    K = 24
    shape = [math.sin(math.pi * (k + 8) / 40.0) for k in range(K)]
    case = four_bus()
    case["name"] = name
    case["horizon"] = {"steps": K, "dt_hours": 0.25}
    devices = [d for d in case["devices"] if d["id"] != "dg3"]
    for d in devices:
        if d["id"] == "batt2":
            d["e0"] = batt_e0
    case["devices"] = devices
    case["forecasts"] = {
        "pv1": {"p": [r4(pv1_amp * s) for s in shape], "q": [0.0] * K},
        "pv3": {"p": [r4(pv3_amp * s) for s in shape], "q": [0.0] * K},
        "ld1": {"p": [loads[0][0]] * K, "q": [loads[0][1]] * K},
        "ld2": {"p": [loads[1][0]] * K, "q": [loads[1][1]] * K},
        "ld3": {"p": [loads[2][0]] * K, "q": [loads[2][1]] * K},
    }
    return case


def events_4bus():
    locations = ["dg0", "dg3", "ld1", "ld2", "ld3", "pv1", "pv3"]

    def prow(targets, p):
        return [p if loc in targets else 0.0 for loc in locations]

    events = [
        {"id": "e_dg_trip", "kind": "dg_trip", "locations": ["dg0", "dg3"],
         "distribution": {"family": "two_point",
                          "params": {"values": [0.0, -1.0], "probs": [0.95, 0.05]},
                          "support": [-1.0, 0.0]}},
        {"id": "e_pv_trip", "kind": "pv_trip", "locations": ["pv1", "pv3"],
         "distribution": {"family": "two_point",
                          "params": {"values": [0.0, -1.0], "probs": [0.97, 0.03]},
                          "support": [-1.0, 0.0]}},
        {"id": "e_dg_cyber", "kind": "dg_cyber", "locations": ["dg0", "dg3"],
         "distribution": {"family": "uniform", "params": {"lo": -0.3, "hi": 0.3},
                          "support": [-0.3, 0.3]}},
        {"id": "e_pv_cyber", "kind": "pv_cyber", "locations": ["pv1", "pv3"],
         "distribution": {"family": "uniform", "params": {"lo": -0.3, "hi": 0.3},
                          "support": [-0.3, 0.3]}},
        {"id": "e_load_cyber", "kind": "load_cyber", "locations": ["ld1", "ld2", "ld3"],
         "distribution": {"family": "uniform", "params": {"lo": -0.3, "hi": 0.0},
                          "support": [-0.3, 0.0]}},
        {"id": "e_pv_fe", "kind": "pv_forecast_err", "locations": ["pv1", "pv3"],
         "distribution": {"family": "gaussian", "params": {"mean": 0.0, "std": 0.08},
                          "support": [-0.5, 0.5]}},
        {"id": "e_load_fe", "kind": "load_forecast_err", "locations": ["ld1", "ld2", "ld3"],
         "distribution": {"family": "gaussian", "params": {"mean": 0.0, "std": 0.06},
                          "support": [-0.4, 0.4]}},
        {"id": "e_wx_pv", "kind": "weather_pv_loss", "locations": ["pv1", "pv3"],
         "distribution": {"family": "exponential_tail", "params": {"rate": 5.0, "sign": -1.0},
                          "support": [-1.0, 0.0]}},
        {"id": "e_wx_load", "kind": "weather_load_loss", "locations": ["ld1", "ld2", "ld3"],
         "distribution": {"family": "exponential_tail", "params": {"rate": 5.0, "sign": -1.0},
                          "support": [-1.0, 0.0]}},
    ]
    matrix = [
        prow(["dg0", "dg3"], 0.02),
        prow(["pv1", "pv3"], 0.02),
        prow(["dg0", "dg3"], 0.05),
        prow(["pv1", "pv3"], 0.05),
        prow(["ld1", "ld2", "ld3"], 0.05),
        prow(["pv1", "pv3"], 0.6),
        prow(["ld1", "ld2", "ld3"], 0.6),
        prow(["pv1", "pv3"], 0.01),
        prow(["ld1", "ld2", "ld3"], 0.01),
    ]
    # per-window impact per event: low / cyber spike / load-loss spike / extreme
    impact = [
        [0.02, 0.01, 0.02, 0.02, 0.02, 0.03, 0.04, 0.01, 0.01],
        [0.03, 0.02, 0.12, 0.10, 0.09, 0.04, 0.05, 0.02, 0.02],
        [0.04, 0.03, 0.05, 0.05, 0.05, 0.05, 0.06, 0.10, 0.25],
        [0.45, 0.30, 0.25, 0.25, 0.22, 0.08, 0.08, 0.35, 0.40],
    ]
    return {
        "events": events,
        "locations": locations,
        "probability_matrix": matrix,
        "windows": [{"from": 0, "to": 12}, {"from": 12, "to": 24},
                    {"from": 24, "to": 36}, {"from": 36, "to": 48}],
        "thresholds": [0.05, 0.15, 0.30],
        "impact": impact,
    }


def gauss_4bus():
    return {
        "labels": ["solar_err", "load_err"],
        "mean": [0.0, 0.0],
        "cov": [[0.0064, 0.0], [0.0, 0.0036]],
        "rows": [{"constraint": "balance", "A": [1.0, -1.0]}],
    }


def dist_4bus():
    return [
        {"target": "dg0", "channel": "capacity_scale", "lo": 0.0, "hi": 1.0,
         "steps": [20, 40]},
        {"target": "ld2", "channel": "load_forecast_add", "lo": 0.0, "hi": 0.3,
         "steps": [28, 44]},
    ]


def samples_loaderr():
    rng = random.Random(20240817)
    n = 300
    draws = []
    for _ in range(n):
        std = 0.18 if rng.random() < 0.05 else 0.06
        draws.append(round(rng.gauss(0.0, std), 6))
    return {"dims": 1, "labels": ["load_err"], "samples": [[d] for d in draws]}


def main():
    out = {
        "2bus.json": two_bus(),
        "4bus.json": four_bus(),
        "4bus_hsll.json": four_bus_profile(
            "4bus_hsll", 1.4, 1.0, [(0.3, 0.1), (0.35, 0.12), (0.25, 0.08)], 2.0),
        "4bus_lshl.json": four_bus_profile(
            "4bus_lshl", 1.0, 0.667, [(1.3, 0.43), (1.5, 0.5), (1.0, 0.33)], 0.4),
        "events_4bus.json": events_4bus(),
        "gauss_4bus.json": gauss_4bus(),
        "dist_4bus.json": dist_4bus(),
        "samples_loaderr.json": samples_loaderr(),
    }
    for name, doc in out.items():
        (HERE / name).write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", name)


if __name__ == "__main__":
    main()
