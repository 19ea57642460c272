"""Smoke test for the coeffid_py extension module.

Build and run from the repository root:

    cargo build -p coeffid-py --features extension-module --release
    cp target/release/libcoeffid_py.so python/coeffid_py.so
    python3 python/smoke_test.py
"""
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import coeffid_py as cf


def main():
    mesh = cf.Mesh(16)
    assert mesh.num_nodes == 17 * 17
    assert mesh.num_interior == 15 * 15
    assert mesh.num_triangles == 2 * 16 * 16
    assert abs(mesh.h - 1.0 / 16) < 1e-15

    q_true = mesh.example("ex1")
    assert min(q_true) == 1.0 and max(q_true) == 2.0
    assert cf.example_q("ex2", 0.5, 0.5) == 2.5

    obs, u = cf.observe(mesh, q_true, delta=0.0)
    assert len(obs) == mesh.num_triangles
    assert len(u) == mesh.num_interior and max(u) > 0.0

    u2 = cf.forward_solve(mesh, q_true)
    assert max(abs(a - b) for a, b in zip(u, u2)) < 1e-8

    j, g = cf.energy_and_gradient(mesh, q_true, obs)
    assert j < 1e-16 and max(abs(x) for x in g) < 1e-8

    q0 = [1.5] * mesh.num_nodes
    j0, g0 = cf.energy_and_gradient(mesh, q0, obs)
    step = 1e-6
    dirn = [math.sin(3.0 * i) for i in range(mesh.num_nodes)]
    qp = [a + step * d for a, d in zip(q0, dirn)]
    qm = [a - step * d for a, d in zip(q0, dirn)]
    fd = (cf.energy_and_gradient(mesh, qp, obs)[0] - cf.energy_and_gradient(mesh, qm, obs)[0]) / (2 * step)
    analytic = sum(a * d for a, d in zip(g0, dirn))
    assert abs(fd - analytic) <= 1e-5 * abs(analytic), (fd, analytic)

    noisy = [v + 0.1 * math.sin(7.0 * i) for i, v in enumerate(q_true)]
    den = cf.prox_tv(noisy, 0.05)
    assert cf.total_variation(den) < cf.total_variation(noisy)

    res = cf.admm(mesh, obs, beta=0.1, outer_iters=10, theta=0.05, bounds=(1.0, 3.0), q_true=q_true)
    hist = res["history"]
    assert len(hist) == 10
    assert hist[-1]["rel_error"] < hist[0]["rel_error"]
    # active-set iterates are feasible up to the Newton KKT tolerance
    assert all(1.0 - 1e-3 <= v <= 3.0 + 1e-3 for v in res["q"])

    try:
        cf.Mesh(0)
    except ValueError:
        pass
    else:
        raise AssertionError("Mesh(0) should raise ValueError")

    print("smoke test ok: rel_error %.3e after %d iterations" % (hist[-1]["rel_error"], len(hist)))


if __name__ == "__main__":
    main()
