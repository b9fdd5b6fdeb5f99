"""Smoke test for the ptlab extension module."""

import math

import ptlab


def main():
    k = ptlab.Kernel([[0.7, 0.3], [0.2, 0.8]])
    rep = k.gap("dense")
    assert abs(rep["gap"] - 0.5) < 1e-12, rep
    assert abs(k.stationary[0] - 0.4) < 1e-12

    fam = ptlab.TemperedFamily([1.0, 3.0, 8.0, 2.0], [0, 0, 1, 1], [0.3, 1.0])
    assert fam.m == 2 and fam.top == 1 and fam.n_atoms == 4
    assert abs(sum(fam.block_masses(1)) - 1.0) < 1e-12
    assert 0.0 < fam.phi() <= 1.0
    pt = fam.kernel("pt")
    assert pt.dim == 16 and pt.detailed_balance_residual() < 1e-12
    assert 0.0 < pt.gap()["gap"] <= 1.0

    assert ptlab.path_length_f(4) == 9
    assert ptlab.swap_sequence(0, 2) == [("swap", 1), ("swap", 2), ("swap", 1)]
    assert len(ptlab.level0_path([0, 1, 0], 1, 1, 0)) == 5

    low = ptlab.verify_lower(ptlab.TemperedFamily.random(2, 2, 2, 1))
    assert low["holds"], low["checks"]

    up = ptlab.verify_upper(3)
    assert up["holds"] and up["certificate"]["gap_within_cheeger"]
    assert ptlab.f_oracle(4)["f"] >= int(math.log2(4))

    run = ptlab.simulate(fam, 2000, seed=3)
    assert len(run["samples"]) == 2000
    assert run == ptlab.simulate(fam, 2000, seed=3)

    try:
        ptlab.verify_upper(0)
    except ValueError:
        pass
    else:
        raise AssertionError("L = 0 must be rejected")
    print("ptlab smoke test passed")


if __name__ == "__main__":
    main()
