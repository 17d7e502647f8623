"""Smoke test for the l2reps_py extension."""

import math

import l2reps_py as lr


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    net = lr.Network.random([3, 4, 2], beta=1.0, activation="relu", seed=1)
    x = [[0.5, -1.0, 2.0, 0.3], [1.0, 0.2, -0.7, 0.1], [-0.4, 0.9, 0.0, 1.5]]
    y = [[1.0, 0.0, 0.5, -1.0], [0.0, 1.0, -0.5, 2.0]]
    lw = net.loss(x, y, 0.1)
    lr_ = net.loss_r(x, y, 0.1)
    lk = net.loss_k(x, y, 0.1)
    assert lr_ <= lw + 1e-12, (lr_, lw)
    assert close(lr_, lk, 1e-8), (lr_, lk)
    assert len(net.forward(x)) == 2
    att, rep = net.forces(x, 1, 1e-3)
    assert len(att) == 4 and len(att[0]) == 4 and len(rep) == 4

    b4 = lr.bipartite_matrix(4)
    value, verified = lr.representation_cost_shallow(b4)
    assert close(value, 16.0) and verified, (value, verified)
    assert lr.graph_cp_rank_lower_bound(4, [(0, 2), (0, 3), (1, 2), (1, 3)]) == 4

    k, ks = lr.cone_construct([[1.0, -2.0, 0.5], [0.3, 0.4, -1.0]])
    lower, upper, witness = lr.rank_sigma_bounds(k, ks)
    assert lower <= 2 and upper <= 2 and witness is not None, (lower, upper)

    neurons = [(1.0, 1.0, 0.0), (1.0, 2.0, 0.1), (-1.0, 1.0, -1.0), (2.0, 1.0, -2.0)]
    points = [-1.0, 0.5, 2.0]
    small, b = lr.compress_1d(neurons, 0.5, points)

    def ev(ns, bias, t):
        return bias + sum(a * max(c * t + d, 0.0) for a, c, d in ns)

    for t in points:
        assert close(ev(small, b, t), ev(neurons, 0.5, t)), t
    assert len(small) <= 4 * len(points)

    passed, failed = lr.verify_counterexample(0.1, [0.05, 0.1])
    assert passed, failed
    assert math.isfinite(lw)
    print("python smoke test passed")


if __name__ == "__main__":
    main()
