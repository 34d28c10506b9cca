"""Regenerate the shipped network and scenario fixtures under src/vimsync/data."""

from __future__ import annotations

import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "vimsync" / "data"

# New England 39-bus system, 100 MVA base (MATPOWER case39)
GENS = [  # bus, Pg [MW], Vg [pu]
    (30, 250.0, 1.0499), (31, 677.871, 0.982), (32, 650.0, 0.9841), (33, 632.0, 0.9972),
    (34, 508.0, 1.0123), (35, 650.0, 1.0494), (36, 560.0, 1.0636), (37, 540.0, 1.0275),
    (38, 830.0, 1.0265), (39, 1000.0, 1.03),
]
LOADS = [  # bus, Pd [MW], Qd [Mvar]
    (1, 97.6, 44.2), (3, 322.0, 2.4), (4, 500.0, 184.0), (7, 233.8, 84.0), (8, 522.0, 176.6),
    (9, 6.5, -66.6), (12, 8.53, 88.0), (15, 320.0, 153.0), (16, 329.0, 32.3), (18, 158.0, 30.0),
    (20, 680.0, 103.0), (21, 274.0, 115.0), (23, 247.5, 84.6), (24, 308.6, -92.2), (25, 224.0, 47.2),
    (26, 139.0, 17.0), (27, 281.0, 75.5), (28, 206.0, 27.6), (29, 283.5, 26.9), (31, 9.2, 4.6),
    (39, 1104.0, 250.0),
]
BRANCHES = [  # from, to, r, x, b, tap
    (1, 2, .0035, .0411, .6987, 1), (1, 39, .001, .025, .75, 1), (2, 3, .0013, .0151, .2572, 1),
    (2, 25, .007, .0086, .146, 1), (2, 30, 0, .0181, 0, 1.025), (3, 4, .0013, .0213, .2214, 1),
    (3, 18, .0011, .0133, .2138, 1), (4, 5, .0008, .0128, .1342, 1), (4, 14, .0008, .0129, .1382, 1),
    (5, 6, .0002, .0026, .0434, 1), (5, 8, .0008, .0112, .1476, 1), (6, 7, .0006, .0092, .113, 1),
    (6, 11, .0007, .0082, .1389, 1), (6, 31, 0, .025, 0, 1.07), (7, 8, .0004, .0046, .078, 1),
    (8, 9, .0023, .0363, .3804, 1), (9, 39, .001, .025, 1.2, 1), (10, 11, .0004, .0043, .0729, 1),
    (10, 13, .0004, .0043, .0729, 1), (10, 32, 0, .02, 0, 1.07), (12, 11, .0016, .0435, 0, 1.006),
    (12, 13, .0016, .0435, 0, 1.006), (13, 14, .0009, .0101, .1723, 1), (14, 15, .0018, .0217, .366, 1),
    (15, 16, .0009, .0094, .171, 1), (16, 17, .0007, .0089, .1342, 1), (16, 19, .0016, .0195, .304, 1),
    (16, 21, .0008, .0135, .2548, 1), (16, 24, .0003, .0059, .068, 1), (17, 18, .0007, .0082, .1319, 1),
    (17, 27, .0013, .0173, .3216, 1), (19, 20, .0007, .0138, 0, 1.06), (19, 33, .0007, .0142, 0, 1.07),
    (20, 34, .0009, .018, 0, 1.009), (21, 22, .0008, .014, .2565, 1), (22, 23, .0006, .0096, .1846, 1),
    (22, 35, 0, .0143, 0, 1.025), (23, 24, .0022, .035, .361, 1), (23, 36, .0005, .0272, 0, 1.0),
    (25, 26, .0032, .0323, .531, 1), (25, 37, .0006, .0232, 0, 1.025), (26, 27, .0014, .0147, .2396, 1),
    (26, 28, .0043, .0474, .7802, 1), (26, 29, .0057, .0625, 1.029, 1), (28, 29, .0014, .0151, .249, 1),
    (29, 38, .0008, .0156, 0, 1.025),
]

R_LINE, L_LINE, C_LINE = 0.014, 0.14, 0.074


def three_bus() -> dict:
    return {
        "name": "three_bus",
        "buses": ["1", "2", "3"],
        "branches": [
            {"name": "L13", "from": "1", "to": "3", "r": R_LINE, "l": L_LINE, "c": C_LINE},
            {"name": "L23", "from": "2", "to": "3", "r": R_LINE, "l": L_LINE, "c": C_LINE},
        ],
    }


def ieee39() -> dict:
    return {
        "name": "ieee39",
        "base_mva": 100.0,
        "buses": [str(k) for k in range(1, 40)],
        "branches": [
            {"name": f"L{a}_{b}", "from": str(a), "to": str(b), "r": r, "l": x, "c": c, "tap": t}
            for a, b, r, x, c, t in BRANCHES
        ],
        "dispatch": {
            "generators": [{"bus": str(b), "p_mw": p, "v_pu": v} for b, p, v in GENS],
            "loads": [{"bus": str(b), "p_mw": p, "q_mvar": q} for b, p, q in LOADS],
        },
    }


def converter(kind: str, p_set=0.5, extra=None) -> dict:
    dev = {"name": "vsc", "type": kind, "bus": "1", "rating": {"value": 1.5, "unit": "MVA"}, "params": {}}
    if kind == "forming":
        dev["params"]["droop"] = {"p_set": p_set}
    else:
        dev["params"]["outer"] = {"p_set": p_set}
    for group, vals in (extra or {}).items():
        dev["params"].setdefault(group, {}).update(vals)
    return dev


def fig2(kind: str, name: str, description: str, events=(), init="equilibrium", t_end=3.0,
         load_p=1.0, extra=None, grid=None) -> dict:
    devices = [
        converter(kind, extra=extra),
        grid or {"name": "grid", "type": "stiff_grid", "bus": "2", "params": {"v_mag": 1.0, "theta": 0.0}},
        {"name": "load", "type": "rl_load", "bus": "3", "params": {"p": load_p, "q": 0.0}},
    ]
    return {
        "name": name,
        "description": description,
        "base": {"s_base": {"value": 1.5, "unit": "MVA"}, "v_base": {"value": 690.0, "unit": "V"},
                 "f_base": {"value": 50.0, "unit": "Hz"}},
        "network": {"file": "three_bus.json"},
        "devices": devices,
        "events": list(events),
        "initialization": {"mode": init, "cold_devices": ["vsc"] if init == "cold_start" else []},
        "t_end": t_end,
    }


def scenarios() -> dict[str, dict]:
    out = {}
    for kind, tag in (("following_vim", "vim"), ("following_pll", "pll"), ("forming", "forming")):
        out[f"fig2_{tag}"] = fig2(kind, f"fig2_{tag}", f"3-bus system with a {tag} converter at equilibrium")
    out["startup"] = fig2(
        "following_vim", "startup", "cold start of the VIM converter, +20% p and +5% V steps at 0.5 s",
        events=[
            {"time": 0.5, "kind": "setpoint_step", "payload": {"device": "vsc", "param": "p_set", "value": 0.6}},
            {"time": 0.5, "kind": "setpoint_step", "payload": {"device": "vsc", "param": "v_set", "value": 1.05}},
        ],
        init="cold_start", t_end=3.0,
    )
    out["f0_sensitivity"] = fig2(
        "following_vim", "f0_sensitivity", "cold start with a 49.9 Hz rotor-speed estimate",
        init="cold_start", t_end=3.0, extra={"vim": {"omega0_star": {"value": 49.9, "unit": "Hz"}}},
    )
    out["fault"] = fig2(
        "following_vim", "fault", "150 ms three-phase fault at the load bus",
        events=[
            {"time": 1.0, "kind": "three_phase_fault_on", "payload": {"bus": "3"}},
            {"time": 1.15, "kind": "fault_clear", "payload": {"bus": "3"}},
        ],
        t_end=3.0,
    )
    out["islanding"] = fig2(
        "following_pll", "islanding", "grid line opened at 0.5 s",
        events=[{"time": 0.5, "kind": "breaker_open", "payload": {"branch": "L23"}}],
        t_end=5.5, load_p=0.5,
    )
    sg = {"name": "sg", "type": "sg", "bus": "2", "rating": 1.0,
          "params": {"p_gen": 0.5, "v_set": 1.0, "slack": True}}
    out["loadstep_sg"] = fig2(
        "following_vim", "loadstep_sg", "SG and converter of equal capacity share a 1 pu load; +0.05 pu at 1 s",
        events=[{"time": 1.0, "kind": "load_step", "payload": {"device": "load", "p": 1.05}}],
        t_end=5.0, grid=sg,
    )
    return out


def write(path: Path, tree: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(tree, indent=2) + "\n")


def main() -> None:
    write(DATA / "networks" / "three_bus.json", three_bus())
    write(DATA / "networks" / "ieee39.json", ieee39())
    for name, tree in scenarios().items():
        write(DATA / "scenarios" / f"{name}.json", tree)
    # the 39-bus ladder is derived from the network data
    from vimsync.analysis import TABLE3_ROWS, ieee39_scenario
    from vimsync.scenario import emit

    for row in range(1, len(TABLE3_ROWS) + 1):
        write(DATA / "scenarios" / f"table3_row{row}.json", emit(ieee39_scenario(row, "following_vim")))


if __name__ == "__main__":
    main()
