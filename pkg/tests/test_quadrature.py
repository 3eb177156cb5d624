import itertools

import numpy as np
import pytest

from nlfem import (BallNorm, BoxDomain, InnerGridSpec, Kernel, KernelKind,
                   QuadratureError, RuleCache, closed_form_weights_1d_constant,
                   constraint_matrix, exact_moment_integrals, filter_to_ball,
                   full_ball_rule, generate_offsets, solve_weights,
                   truncated_ball_rule)


def test_offsets_1d_single_ring():
    offs = generate_offsets(InnerGridSpec(1, 1), 0.02)
    assert np.allclose(sorted(offs.active[:, 0]), [-0.01, 0.01])


def test_offsets_1d_two_rings():
    d = 0.4
    offs = generate_offsets(InnerGridSpec(2, 1), d)
    assert np.allclose(sorted(offs.active[:, 0]),
                       [-3 * d / 4, -d / 4, d / 4, 3 * d / 4])


def test_offsets_2d_count():
    offs = generate_offsets(InnerGridSpec(4, 2), 1.0)
    assert offs.active.shape == (64, 2)
    assert not np.any(np.all(offs.active == 0.0, axis=1))


def test_offsets_reflection_symmetric():
    offs = generate_offsets(InnerGridSpec(3, 2), 0.5).active
    as_set = {tuple(np.round(o, 15)) for o in offs}
    assert as_set == {tuple(np.round(-o, 15)) for o in offs}


def test_filter_euclidean_2d():
    offs = generate_offsets(InnerGridSpec(4, 2), 1.0)
    kept = filter_to_ball(offs, 1.0, BallNorm.EUCLIDEAN)
    assert kept.included.sum() == 52


def test_filter_max_norm_keeps_all():
    offs = generate_offsets(InnerGridSpec(4, 2), 1.0)
    kept = filter_to_ball(offs, 1.0, BallNorm.MAX)
    assert kept.included.all()


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_filter_1d_keeps_all(n):
    offs = generate_offsets(InnerGridSpec(n, 1), 0.3)
    kept = filter_to_ball(offs, 0.3, BallNorm.EUCLIDEAN)
    assert kept.included.all()


def test_constraint_matrix_1d():
    d = 0.3
    k = Kernel.make(KernelKind.CONSTANT, 1, d)
    B = constraint_matrix(k, [0.5], [[0.5 - d / 2], [0.5 + d / 2]])
    expected = (1.5 / d**3) * (d**2 / 4)
    assert B.shape == (1, 2)
    assert np.allclose(B, expected)


def test_constraint_matrix_2d_rows():
    k = Kernel.make(KernelKind.CONSTANT, 2, 0.2)
    B = constraint_matrix(k, [0.0, 0.0], [[0.1, 0.0], [0.05, 0.05]])
    assert B.shape == (3, 2)
    assert B[1, 0] == 0.0  # cross-term row vanishes for an axis-aligned offset


def test_constraint_matrix_rejects_center():
    k = Kernel.make(KernelKind.CONSTANT, 1, 0.1)
    with pytest.raises(QuadratureError, match="singular"):
        constraint_matrix(k, [0.3], [[0.3]])


def test_solve_weights_single_ring():
    d = 0.02
    k = Kernel.make(KernelKind.CONSTANT, 1, d)
    rule = full_ball_rule(k, InnerGridSpec(1, 1), cache=RuleCache())
    assert np.allclose(rule.weights, 4 * d / 3, rtol=1e-13)


def test_solve_weights_two_rings():
    d = 0.02
    k = Kernel.make(KernelKind.CONSTANT, 1, d)
    rule = full_ball_rule(k, InnerGridSpec(2, 1), cache=RuleCache())
    order = np.argsort(rule.offsets[:, 0])
    assert np.allclose(rule.weights[order],
                       [72 * d / 123, 8 * d / 123, 8 * d / 123, 72 * d / 123],
                       rtol=1e-13)


def test_solve_weights_minimal_norm_vs_saddle_point():
    # dense KKT solve of the equality-constrained problem as oracle
    rng = np.random.default_rng(42)
    for rows, cols in [(1, 4), (3, 13), (3, 52)]:
        B = rng.standard_normal((rows, cols))
        g = rng.standard_normal(rows)
        kkt = np.block([[np.eye(cols), B.T], [B, np.zeros((rows, rows))]])
        sol = np.linalg.solve(kkt, np.concatenate([np.zeros(cols), g]))
        w, residual = solve_weights(B, g)
        assert np.allclose(w, sol[:cols], atol=1e-10)
        assert residual <= 1e-12 * np.linalg.norm(g)


def test_solve_weights_degenerate():
    with pytest.raises(QuadratureError, match="degenerate"):
        solve_weights(np.zeros((1, 4)), np.array([1.0]))


def test_full_rule_exactness_all_kernels():
    for kind, dim in itertools.product(
            (KernelKind.CONSTANT, KernelKind.RATIONAL), (1, 2)):
        k = Kernel.make(kind, dim, 0.11)
        g = exact_moment_integrals(k)
        for n in (1, 2, 4):
            rule = full_ball_rule(k, InnerGridSpec(n, dim), cache=RuleCache())
            B = constraint_matrix(k, np.zeros(dim), rule.offsets)
            assert np.linalg.norm(B @ rule.weights - g) <= 1e-12 * np.linalg.norm(g)


@pytest.mark.parametrize("kind,dim", list(itertools.product(
    (KernelKind.CONSTANT, KernelKind.RATIONAL), (1, 2))))
def test_full_rule_positive_weights(kind, dim):
    k = Kernel.make(kind, dim, 0.2)
    for n in range(1, 11):
        rule = full_ball_rule(k, InnerGridSpec(n, dim), cache=RuleCache())
        assert np.all(rule.weights > 0)


def test_full_rule_dihedral_symmetry_2d():
    k = Kernel.make(KernelKind.RATIONAL, 2, 0.5)
    rule = full_ball_rule(k, InnerGridSpec(4, 2), cache=RuleCache())
    table = {tuple(np.round(o, 14)): w for o, w in zip(rule.offsets, rule.weights)}
    for (ox, oy), w in table.items():
        for sym in [(-ox, oy), (ox, -oy), (oy, ox), (-oy, -ox)]:
            assert table[tuple(np.round(sym, 14))] == pytest.approx(w, rel=1e-12)


def test_weights_scale_with_horizon():
    spec = InnerGridSpec(3, 2)
    for kind in (KernelKind.CONSTANT, KernelKind.RATIONAL):
        w1 = full_ball_rule(Kernel.make(kind, 2, 0.1), spec, cache=RuleCache()).weights
        w2 = full_ball_rule(Kernel.make(kind, 2, 0.35), spec, cache=RuleCache()).weights
        assert np.allclose(w2, (0.35 / 0.1) ** 2 * w1, rtol=1e-12)


def test_full_rule_cached_and_shared():
    cache = RuleCache()
    k = Kernel.make(KernelKind.CONSTANT, 1, 0.1)
    spec = InnerGridSpec(3, 1)
    r1 = full_ball_rule(k, spec, cache=cache)
    r2 = full_ball_rule(k, spec, cache=cache)
    assert r1 is r2
    assert cache.misses == 1
    n_extra = 5
    for _ in range(n_extra):
        full_ball_rule(k, spec, cache=cache)
    assert cache.hits == 1 + n_extra


def test_closed_form_matches_solver():
    d = 0.37
    for n in range(1, 21):
        k = Kernel.make(KernelKind.CONSTANT, 1, d)
        rule = full_ball_rule(k, InnerGridSpec(n, 1), cache=RuleCache())
        closed = closed_form_weights_1d_constant(n, d)
        assert np.allclose(rule.weights, closed, rtol=1e-12)
        assert np.all(closed > 0)


def test_closed_form_values():
    assert np.allclose(closed_form_weights_1d_constant(1, 0.02), 4 * 0.02 / 3)
    w = closed_form_weights_1d_constant(2, 1.0)
    assert np.allclose(sorted(w), [8 / 123, 8 / 123, 72 / 123, 72 / 123])


def test_min_weight_lower_bound():
    # the smallest weight scales like horizon for every grid density
    d = 0.6
    for n in range(1, 21):
        w = closed_form_weights_1d_constant(n, d)
        expected_min = 20 * d * n / (7 - 40 * n**2 + 48 * n**4)
        assert w.min() == pytest.approx(expected_min, rel=1e-13)
        assert w.min() > 0


def _domain_1d(delta, extension):
    return BoxDomain.unit(1, delta, extension)


def test_truncated_full_extension_reuses_full_ball_weights():
    d = 0.2
    k = Kernel.make(KernelKind.RATIONAL, 1, d)
    spec = InnerGridSpec(4, 1)
    cache = RuleCache()
    full = full_ball_rule(k, spec, cache=cache)
    rule = truncated_ball_rule(k, [-0.1], _domain_1d(d, d), spec, cache=cache)
    assert rule.truncated
    assert rule.size < full.size  # outside points dropped
    kept = {tuple(o) for o in rule.offsets}
    for o, w_full in zip(full.offsets, full.weights):
        if tuple(o) in kept:
            i = np.flatnonzero(np.all(rule.offsets == o, axis=1))[0]
            assert rule.weights[i] == w_full


def test_truncated_zero_extension_resolves_weights():
    d = 0.2
    k = Kernel.make(KernelKind.CONSTANT, 1, d)
    spec = InnerGridSpec(4, 1)
    cache = RuleCache()
    center = [-d / 2]  # half the ball sticks out on the left
    rule = truncated_ball_rule(k, center, _domain_1d(d, 0.0), spec, cache=cache)
    full = full_ball_rule(k, spec, cache=cache)
    assert rule.size < full.size
    # exactness against full-ball moments still holds on the reduced set
    B = constraint_matrix(k, [0.0], rule.offsets)
    g = exact_moment_integrals(k)
    assert np.linalg.norm(B @ rule.weights - g) <= 1e-12 * np.linalg.norm(g)
    # and the kept weights differ from the full-ball ones
    kept = {tuple(o): w for o, w in zip(rule.offsets, rule.weights)}
    diffs = [abs(kept[tuple(o)] - w) for o, w in zip(full.offsets, full.weights)
             if tuple(o) in kept]
    assert max(diffs) > 1e-6

    # brute-force KKT oracle on the same reduced point set
    pts = np.asarray(center) + rule.offsets
    in_dom = (pts[:, 0] >= -d) & (pts[:, 0] <= 1 + d)
    assert in_dom.all()
    Bk = constraint_matrix(k, center, pts)
    n = Bk.shape[1]
    kkt = np.block([[np.eye(n), Bk.T], [Bk, np.zeros((1, 1))]])
    sol = np.linalg.solve(kkt, np.concatenate([np.zeros(n), g]))
    assert np.allclose(rule.weights, sol[:n], atol=1e-12)


def test_truncated_center_inside_box_returns_full_rule():
    d = 0.2
    k = Kernel.make(KernelKind.CONSTANT, 1, d)
    spec = InnerGridSpec(3, 1)
    cache = RuleCache()
    full = full_ball_rule(k, spec, cache=cache)
    rule = truncated_ball_rule(k, [0.5], _domain_1d(d, 0.0), spec, cache=cache)
    assert rule is full


def test_truncated_cache_reuse():
    d = 0.2
    k = Kernel.make(KernelKind.CONSTANT, 1, d)
    spec = InnerGridSpec(4, 1)
    cache = RuleCache()
    r1 = truncated_ball_rule(k, [-d / 2], _domain_1d(d, 0.0), spec, cache=cache)
    misses = cache.misses
    r2 = truncated_ball_rule(k, [-d / 2], _domain_1d(d, 0.0), spec, cache=cache)
    assert cache.misses == misses
    assert np.array_equal(r1.weights, r2.weights)


def test_cache_concurrent_access():
    import threading

    cache = RuleCache()
    k = Kernel.make(KernelKind.RATIONAL, 2, 0.3)
    spec = InnerGridSpec(4, 2)
    results = [None] * 8

    def work(i):
        results[i] = full_ball_rule(k, spec, cache=cache)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    weights = results[0].weights
    assert all(np.array_equal(r.weights, weights) for r in results)
    assert cache.hits + cache.misses >= 8


def test_rule_dump_csv(tmp_path):
    k = Kernel.make(KernelKind.CONSTANT, 2, 0.1)
    rule = full_ball_rule(k, InnerGridSpec(2, 2), cache=RuleCache())
    path = tmp_path / "rule.csv"
    rule.dump_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "offset_x,offset_y,weight"
    assert len(lines) == 1 + rule.size
