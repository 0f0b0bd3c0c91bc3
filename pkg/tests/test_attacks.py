"""Attacks: projection geometry, PGD, boundary search, SPSA."""

import numpy as np
import pytest

import imatrain as im
from imatrain.attacks import bpgd_batch
from imatrain.rngs import substream

from conftest import (hyperplane_distance, linear_2class_model,
                      random_small_model, threshold_model_1d)


# ---------------------------------------------------------------------------
# projection


def test_project_ball_on_sphere_unchanged():
    d = np.array([3.0, 4.0])
    assert np.array_equal(im.project_ball(d, 5.0, "l2"), d)


def test_project_ball_radial_scaling():
    out = im.project_ball(np.array([3.0, 4.0]), 2.5, "l2")
    assert np.allclose(out, [1.5, 2.0], atol=1e-12)


def test_project_ball_linf_clamp():
    out = im.project_ball(np.array([0.3, -0.9]), 0.5, "linf")
    assert np.array_equal(out, [0.3, -0.5])


def test_project_ball_idempotent_bit_exact():
    rng = np.random.default_rng(0)
    for _ in range(500):
        d = rng.normal(size=rng.integers(1, 8)) * 10 ** rng.uniform(-3, 3)
        eps = float(rng.uniform(0, 2))
        for norm in ("l2", "linf"):
            once = im.project_ball(d, eps, norm)
            twice = im.project_ball(once, eps, norm)
            assert np.array_equal(once, twice)
            if norm == "l2":
                assert np.linalg.norm(once) <= eps * (1 + 1e-9) + 1e-300
            else:
                assert np.abs(once).max(initial=0.0) <= eps


def test_project_ball_negative_epsilon_rejected():
    with pytest.raises(ValueError):
        im.project_ball(np.ones(2), -0.1)


# ---------------------------------------------------------------------------
# random init


def test_pgd_init_zero_epsilon_exact():
    cfg = im.AttackConfig(epsilon=0.0, seed=4)
    x = np.array([0.2, -0.4])
    assert np.array_equal(im.pgd_init(x, cfg), x)


def test_pgd_init_uniform_in_l2_ball():
    cfg = im.AttackConfig(epsilon=1.0, norm="l2", seed=5)
    rng = substream(5, "mc")
    x = np.zeros(2)
    draws = np.array([im.pgd_init(x, cfg, rng) for _ in range(10000)])
    norms = np.linalg.norm(draws, axis=1)
    assert norms.max() <= 1.0 + 1e-9
    assert np.percentile(norms, 99) > 0.9
    # area-uniformity: half the mass inside radius sqrt(1/2)
    assert abs((norms <= np.sqrt(0.5)).mean() - 0.5) < 0.02


def test_pgd_init_deterministic():
    cfg = im.AttackConfig(epsilon=0.7, seed=21)
    x = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(im.pgd_init(x, cfg), im.pgd_init(x, cfg))


def test_pgd_init_respects_box():
    cfg = im.AttackConfig(epsilon=0.5, seed=6, clip_box=(0.0, 1.0))
    x = np.array([0.05, 0.95])
    for k in range(50):
        out = im.pgd_init(x, cfg, substream(6, k))
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_attack_config_derived_step():
    cfg = im.AttackConfig(epsilon=0.3, n_pgd=20, alpha=4.0)
    assert cfg.step_size == pytest.approx(4.0 * 0.3 / 20)
    assert cfg.with_epsilon(0.6).step_size == pytest.approx(0.12)
    with pytest.raises(ValueError):
        im.AttackConfig(norm="l1")
    with pytest.raises(ValueError):
        im.AttackConfig(alpha=0.5)
    with pytest.raises(ValueError):
        im.AttackConfig(n_binary=0)


# ---------------------------------------------------------------------------
# PGD


def test_pgd_attack_zero_epsilon_identity():
    m = threshold_model_1d()
    cfg = im.AttackConfig(epsilon=0.0, n_pgd=5, seed=1)
    x = np.array([0.2])
    x_adv, traj = im.pgd_attack(m, x, 0, cfg)
    assert np.array_equal(x_adv, x)
    assert traj.correct_flags.all()
    assert np.all(traj.points == x)


def test_pgd_attack_linear_geometry():
    rng = np.random.default_rng(7)
    for _ in range(25):
        W = rng.normal(size=(2, 2))
        b = rng.normal(size=2) * 0.1
        if np.linalg.norm(W[:, 1] - W[:, 0]) < 0.3:
            continue
        m = linear_2class_model(W, b)
        x = rng.normal(size=2)
        y = int(m.predict(x))
        dist = hyperplane_distance(W, b, x)
        if dist < 0.05:
            continue
        cfg = im.AttackConfig(epsilon=1.1 * dist, n_pgd=100, alpha=4, seed=3)
        x_adv, _ = im.pgd_attack(m, x, y, cfg)
        assert m.predict(x_adv) != y
        cfg = im.AttackConfig(epsilon=0.9 * dist, n_pgd=100, alpha=4, seed=3)
        x_adv, traj = im.pgd_attack(m, x, y, cfg)
        assert m.predict(x_adv) == y
        assert traj.correct_flags.all()


def test_trajectory_ball_and_box_fuzz():
    rng = np.random.default_rng(8)
    for trial in range(60):
        m = random_small_model(rng, max_linear=2, max_dim=6)
        norm = "l2" if trial % 2 == 0 else "linf"
        box = (-2.0, 2.0) if trial % 3 == 0 else None
        eps = float(rng.uniform(0, 1.5))
        cfg = im.AttackConfig(norm=norm, epsilon=eps,
                              n_pgd=int(rng.integers(1, 8)),
                              alpha=float(rng.uniform(1, 6)),
                              seed=trial, clip_box=box)
        x = rng.uniform(-1.5, 1.5, m.in_dim)
        y = int(rng.integers(0, m.num_classes))
        kind = "cross_entropy" if trial % 2 else "logit_margin"
        x_adv, traj = im.pgd_attack(m, x, y, cfg, loss_kind=kind)
        pts = np.vstack([traj.points, x_adv])
        delta = pts - x
        if norm == "l2":
            assert np.linalg.norm(delta, axis=1).max() <= eps + 1e-9
        else:
            assert np.abs(delta).max() <= eps + 1e-9
        if box is not None:
            assert pts.min() >= box[0] - 1e-12
            assert pts.max() <= box[1] + 1e-12


def test_pgd_loss_ascent_monotone_on_linear_models():
    rng = np.random.default_rng(9)
    done = 0
    while done < 100:
        W = rng.normal(size=(3, 2))
        b = rng.normal(size=2) * 0.2
        if np.linalg.norm(W[:, 1] - W[:, 0]) < 1e-2:
            continue
        m = linear_2class_model(W, b)
        x = rng.normal(size=3)
        y = int(rng.integers(0, 2))
        cfg = im.AttackConfig(epsilon=float(rng.uniform(0.05, 1.0)),
                              n_pgd=int(rng.integers(2, 12)), alpha=2.0,
                              seed=done)
        _, traj = im.pgd_attack(m, x, y, cfg)
        losses = [im.loss(m, p, y) for p in traj.points]
        diffs = np.diff(losses)
        assert diffs.min(initial=0.0) >= -1e-12
        done += 1


def test_attack_batch_matches_single_sample():
    rng = np.random.default_rng(10)
    m = random_small_model(rng, in_dim=2)
    X = rng.normal(size=(4, 2))
    Y = rng.integers(0, m.num_classes, 4)
    cfg = im.AttackConfig(epsilon=0.4, n_pgd=6, seed=17)
    batch = im.attack_batch(m, X, Y, cfg, rng=substream(17, "x"))
    assert batch.shape == X.shape
    deltas = np.linalg.norm(batch - X, axis=1)
    assert deltas.max() <= 0.4 + 1e-9


# ---------------------------------------------------------------------------
# BPGD


def test_bpgd_zero_margin_absent():
    m = threshold_model_1d()
    cfg = im.AttackConfig(epsilon=0.0, n_pgd=10, seed=2)
    assert im.bpgd(m, np.array([0.2]), 0, 0.0, cfg) is None


def test_bpgd_threshold_model_converges_to_boundary():
    m = threshold_model_1d()
    cfg = im.AttackConfig(n_pgd=20, alpha=4, n_binary=10, seed=12)
    x_n = im.bpgd(m, np.array([0.2]), 0, 1.0, cfg)
    assert x_n is not None
    assert abs(x_n[0] - 0.5) <= 0.8 / 2 ** 10


def test_bpgd_case0_when_ball_cannot_reach():
    rng = np.random.default_rng(11)
    for trial in range(25):
        W = rng.normal(size=(2, 2))
        b = rng.normal(size=2) * 0.1
        if np.linalg.norm(W[:, 1] - W[:, 0]) < 0.3:
            continue
        m = linear_2class_model(W, b)
        x = rng.normal(size=2)
        y = int(m.predict(x))
        dist = hyperplane_distance(W, b, x)
        if dist < 0.05:
            continue
        cfg = im.AttackConfig(n_pgd=20, alpha=4, seed=trial)
        assert im.bpgd(m, x, y, 0.5 * dist, cfg) is None


def test_bpgd_absent_iff_trajectory_all_correct():
    rng = np.random.default_rng(12)
    for trial in range(100):
        m = random_small_model(rng, in_dim=2, max_linear=2, max_dim=6)
        x = rng.normal(size=2)
        y = int(m.predict(x))
        margin = float(rng.uniform(0, 1.2))
        cfg = im.AttackConfig(epsilon=margin, n_pgd=int(rng.integers(1, 10)),
                              alpha=4, seed=trial)
        _, traj = im.pgd_attack(m, x, y, cfg)
        out = im.bpgd(m, x, y, margin, cfg)
        assert (out is None) == bool(traj.correct_flags.all())


def test_bpgd_flip_certificate_and_bracket_width():
    rng = np.random.default_rng(13)
    found_cases = 0
    for trial in range(200):
        m = random_small_model(rng, in_dim=2, max_linear=2, max_dim=6)
        X = rng.normal(size=(8, 2))
        Y = m.predict(X)
        margins = rng.uniform(0.2, 1.5, 8)
        cfg = im.AttackConfig(n_pgd=int(rng.integers(2, 10)), alpha=4,
                              n_binary=10, seed=trial)
        res = bpgd_batch(m, X, Y, margins, cfg)
        for i in np.where(res.found)[0]:
            found_cases += 1
            assert m.predict(res.points[i]) != Y[i]
            assert m.predict(res.partners[i]) == Y[i]
            # both bracket seeds lie within the ball, so the initial gap is
            # at most the ball diameter (plus the projection shell slack)
            gap = np.linalg.norm(res.points[i] - res.partners[i])
            assert gap <= 2 * margins[i] / 2 ** 10 + 1e-9
        if found_cases > 300:
            break
    assert found_cases > 50


def test_bpgd_misclassified_input_rejected():
    m = threshold_model_1d()
    with pytest.raises(ValueError, match="correctly-classified"):
        im.bpgd(m, np.array([0.8]), 0, 0.5, im.AttackConfig(seed=1))


def test_bpgd_operation_count_linear_in_budget():
    rng = np.random.default_rng(14)
    m = random_small_model(rng, in_dim=2, max_linear=2, max_dim=6)
    X = rng.normal(size=(32, 2))
    Y = m.predict(X)
    cfg = im.AttackConfig(n_pgd=20, alpha=4, n_binary=10, seed=9)
    m.counters.reset()
    bpgd_batch(m, X, Y, np.full(32, 0.8), cfg)
    per_sample_fwd = m.counters.forward_samples / 32
    per_sample_grad = m.counters.grad_input_samples / 32
    assert per_sample_fwd <= cfg.n_pgd + cfg.n_binary + 2
    assert per_sample_grad <= cfg.n_pgd


# ---------------------------------------------------------------------------
# SPSA


def quadratic_objective(A, b):
    def f(P):
        return 0.5 * np.einsum("ni,ij,nj->n", P, A, P) + P @ b
    return f


def test_spsa_gradient_on_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([0.3, -0.2])
    x = np.array([0.7, 0.4])
    g_true = A @ x + b
    rng = substream(31, "spsa")
    g_est = im.spsa_gradient(quadratic_objective(A, b), x, 2048, 0.01, rng)
    rel = np.linalg.norm(g_est - g_true) / np.linalg.norm(g_true)
    assert rel < 0.10


def test_spsa_gradient_requires_even_samples():
    with pytest.raises(ValueError, match="even"):
        im.spsa_gradient(lambda P: P[:, 0], np.zeros(2), 3, 0.01,
                         substream(0))


def test_spsa_attack_zero_epsilon():
    m = threshold_model_1d()
    cfg = im.AttackConfig(epsilon=0.0, n_pgd=3, seed=3)
    out = im.spsa_attack(m, np.array([0.2]), 0, cfg, n_samples=8)
    assert np.array_equal(out, np.array([0.2]))


def test_spsa_attack_matches_pgd_on_linear_geometry():
    rng = np.random.default_rng(15)
    agree = total = 0
    for trial in range(20):
        W = rng.normal(size=(2, 2))
        b = rng.normal(size=2) * 0.1
        if np.linalg.norm(W[:, 1] - W[:, 0]) < 0.3:
            continue
        m = linear_2class_model(W, b)
        x = rng.normal(size=2)
        y = int(m.predict(x))
        dist = hyperplane_distance(W, b, x)
        if not 0.05 < dist < 2.0:
            continue
        cfg = im.AttackConfig(epsilon=1.3 * dist, n_pgd=40, alpha=4,
                              seed=trial)
        x_s = im.spsa_attack(m, x, y, cfg, n_samples=256, perturb_scale=0.01)
        x_p, _ = im.pgd_attack(m, x, y, cfg)
        total += 1
        agree += (m.predict(x_s) != y) == (m.predict(x_p) != y)
        assert np.linalg.norm(x_s - x) <= cfg.epsilon + 1e-9
    assert total >= 10
    assert agree / total >= 0.9


def test_spsa_never_uses_input_gradients():
    m = threshold_model_1d()
    cfg = im.AttackConfig(epsilon=0.6, n_pgd=5, seed=4)
    m.counters.reset()
    im.spsa_attack(m, np.array([0.2]), 0, cfg, n_samples=64)
    assert m.counters.grad_input_samples == 0
    assert m.counters.forward_samples > 0
