#!/usr/bin/env python3
"""Smoke test for the ris_d2d_py extension module.

Build the extension first:

    cargo build -p ris-d2d-py --release

then run this script from anywhere:

    python3 python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile


def locate_extension():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidates = [
        os.path.join(root, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libris_d2d_py.so", "ris_d2d_py.so", "libris_d2d_py.dylib")
    ]
    for path in candidates:
        if os.path.exists(path):
            return path
    sys.exit("extension not found; run `cargo build -p ris-d2d-py --release` first")


def import_module():
    src = locate_extension()
    staging = tempfile.mkdtemp(prefix="ris_d2d_py_")
    dst = os.path.join(staging, "ris_d2d_py.so")
    shutil.copyfile(src, dst)
    sys.path.insert(0, staging)
    import ris_d2d_py

    return ris_d2d_py


def main():
    rd = import_module()

    # path loss: reference-distance identity and the power law
    assert math.isclose(rd.path_loss(50.0, 0.25, 50.0, 3.0), 0.25)
    assert math.isclose(rd.path_loss(100.0, 0.25, 50.0, 3.0), 0.25 / 8.0)

    # codecs
    assert rd.decode_d2d_action(0, 4, 9) == (0, 0)
    assert rd.decode_d2d_action(9, 4, 9) == (1, 0)
    deltas, position = rd.decode_ris_action(0, 3, 4)
    assert deltas == [-1, -1, -1] and position == 0

    # FLOPs accounting of the reference architecture
    bs_total, per_agent, total = rd.flops(
        [52, 500, 250, 125, 43046721 * 25],
        [[30, 500, 250, 125, 36]] * 4,
    )
    assert bs_total == 2 * (52 * 500 + 500 * 250 + 250 * 125 + 125 * 43046721 * 25)
    assert per_agent == [2 * (30 * 500 + 500 * 250 + 250 * 125 + 125 * 36)] * 4
    assert total == bs_total + sum(per_agent)

    # simulate a desk-scale slot
    scenario = rd.Scenario.desk()
    print("scenario:", scenario)
    assert scenario.observation_len() == scenario.num_cellular * (scenario.num_d2d_pairs + 3) + 2

    sim = rd.Simulator(scenario, seed=42)
    sim.begin_episode(0)
    tx, rx, cells, bs, grid = sim.topology()
    assert len(tx) == scenario.num_d2d_pairs and len(grid) == scenario.num_grid_cells

    alloc = rd.Allocation([0, 1], [2, 2], scenario)
    ris = rd.RisSurface.random(scenario, seed=7)
    out = sim.evaluate(ris, alloc)
    print("slot:", out)
    assert out.sum_rate > 0.0
    assert math.isclose(
        out.sum_rate, sum(out.d2d_rates) + sum(out.cellular_rates), rel_tol=1e-12
    )
    gated = out.marl_reward()
    assert gated == (out.sum_rate if out.feasible else 0.0)

    # the no-RIS degeneracy: zero amplitude reproduces direct-only channels
    off = sim.evaluate(ris.without_ris(), alloc)
    other_phases = rd.RisSurface([1] * scenario.num_ris_elements, 4, 0.0, 0)
    off2 = sim.evaluate(other_phases, alloc)
    assert off.sum_rate == off2.sum_rate

    # observations and BS state have the documented layout and ranges
    obs = sim.observation(0, ris, alloc)
    assert len(obs) == scenario.observation_len()
    assert all(0.0 <= v <= 1.0 for v in obs)
    state = sim.ris_state(ris, alloc)
    assert len(state) == scenario.ris_state_len()

    # fading advances between slots
    before = sim.evaluate(ris, alloc).sum_rate
    sim.advance_slot()
    after = sim.evaluate(ris, alloc).sum_rate
    assert before != after

    # per-slot exhaustive optimum dominates an arbitrary feasible choice
    best_rate, feasible, best_alloc, best_ris = sim.exhaustive_search(10_000_000)
    probe = sim.evaluate(ris, alloc)
    if probe.feasible and feasible:
        assert best_rate >= probe.sum_rate
    print(f"exhaustive optimum: {best_rate:.4e} bits/s (feasible={feasible})")
    print("smoke test passed")


if __name__ == "__main__":
    main()
