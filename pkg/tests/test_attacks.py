import numpy as np
import pytest

from gils.attacks import (
    DEFAULT_EPSILON,
    KINDS,
    AttackConfig,
    attack,
    attack_dataset,
    attack_then_gils,
    attacked_accuracy,
    cw_linf,
    fgsm,
    margin,
    pgd,
)
from gils.data import blobs_benchmark
from gils.errors import ConfigError
from gils.model import accuracy
from gils.perturb import PerturbConfig
from gils.trainer import GilsConfig, train_gils

from conftest import random_params


@pytest.fixture(scope="module")
def trained():
    bench = blobs_benchmark(0)
    params, _ = train_gils(GilsConfig(PerturbConfig(), track_full_gradient=False), bench.train)
    return bench, params


def test_config_validation():
    assert AttackConfig().epsilon == DEFAULT_EPSILON == 8 / 225
    assert AttackConfig(epsilon=0.4).step == 0.1
    for bad in (dict(kind="deepfool"), dict(epsilon=-0.1), dict(steps=0), dict(kappa=-1.0), dict(step_size=-1.0)):
        with pytest.raises(ConfigError):
            AttackConfig(**bad)
    assert AttackConfig(kind="fgsm", steps=0).kind == "fgsm"


@pytest.mark.parametrize("kind", KINDS)
def test_zero_epsilon_is_identity(kind):
    rng = np.random.default_rng(0)
    params = random_params(rng, 4, [6], 3)
    cfg = AttackConfig(kind=kind, epsilon=0.0)
    for _ in range(10):
        x = rng.standard_normal(4)
        assert np.array_equal(attack(params, x, int(rng.integers(3)), cfg), x)


def test_fgsm_stays_in_ball():
    rng = np.random.default_rng(1)
    params = random_params(rng, 5, [6], 3)
    for _ in range(50):
        x = rng.standard_normal(5)
        eps = float(rng.uniform(0, 0.5))
        assert np.max(np.abs(fgsm(params, x, int(rng.integers(3)), eps) - x)) <= eps + 1e-12


def test_single_step_pgd_equals_fgsm():
    rng = np.random.default_rng(2)
    params = random_params(rng, 5, [6], 3)
    for _ in range(20):
        x = rng.standard_normal(5)
        c = int(rng.integers(3))
        cfg = AttackConfig("pgd_linf", epsilon=0.2, steps=1, step_size=0.2)
        np.testing.assert_array_equal(pgd(params, x, c, cfg), fgsm(params, x, c, 0.2))


@pytest.mark.parametrize("kind", ["pgd_linf", "pgd_l2"])
def test_every_pgd_iterate_in_ball(kind):
    rng = np.random.default_rng(3)
    params = random_params(rng, 5, [6], 3, scale=2.0)
    worst = 0.0
    for _ in range(30):
        x = rng.standard_normal(5)
        eps = float(rng.uniform(0.01, 1.0))
        cfg = AttackConfig(kind, epsilon=eps, steps=20, step_size=eps / 2)

        def check(xa):
            nonlocal worst
            d = np.max(np.abs(xa - x)) if kind == "pgd_linf" else np.linalg.norm(xa - x)
            worst = max(worst, d - eps)

        pgd(params, x, int(rng.integers(3)), cfg, callback=check)
    assert worst <= 1e-12


def test_attacks_respect_domain_box(trained):
    bench, params = trained
    lo, hi = bench.test_seen.domain_box
    for kind in KINDS:
        adv = attack_dataset(params, bench.test_seen, AttackConfig(kind, epsilon=5.0))
        assert np.all(adv >= lo) and np.all(adv <= hi)


def test_cw_stops_once_margin_below_minus_kappa():
    rng = np.random.default_rng(4)
    params = random_params(rng, 4, [6], 3)
    for _ in range(20):
        x = rng.standard_normal(4)
        c = int(rng.integers(3))
        m = margin(params, x, c)
        # a kappa smaller than -margin leaves the clamped loss flat at x
        if m < 0:
            cfg = AttackConfig("cw_linf", epsilon=0.5, kappa=-m / 2)
            assert np.array_equal(cw_linf(params, x, c, cfg), x)


def test_cw_returns_best_margin_iterate():
    rng = np.random.default_rng(5)
    params = random_params(rng, 4, [6], 3, scale=2.0)
    for _ in range(20):
        x = rng.standard_normal(4)
        c = int(rng.integers(3))
        adv = cw_linf(params, x, c, AttackConfig("cw_linf", epsilon=0.3))
        assert margin(params, adv, c) <= margin(params, x, c)
        assert np.max(np.abs(adv - x)) <= 0.3 + 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_attacks_do_not_raise_accuracy(trained, kind):
    bench, params = trained
    clean = accuracy(params, bench.test_seen.X, bench.test_seen.y)
    assert attacked_accuracy(params, bench.test_seen, AttackConfig(kind, epsilon=0.3)) <= clean


def test_attacked_accuracy_at_zero_eps_is_clean(trained):
    bench, params = trained
    for kind in KINDS:
        cfg = AttackConfig(kind, epsilon=0.0)
        assert attacked_accuracy(params, bench.test_shifted, cfg) == accuracy(params, bench.test_shifted.X, bench.test_shifted.y)


def test_monotone_harm():
    grid = [0.0, 0.05, 0.2, 0.5, 1.0]
    accs = np.zeros((5, len(grid)))
    for seed in range(5):
        bench = blobs_benchmark(seed)
        params, _ = train_gils(GilsConfig(PerturbConfig(), seed=seed, track_full_gradient=False), bench.train)
        for j, eps in enumerate(grid):
            accs[seed, j] = attacked_accuracy(params, bench.test_seen, AttackConfig("pgd_linf", epsilon=eps))
    mean = accs.mean(axis=0)
    for i in range(len(grid)):
        for j in range(i, len(grid)):
            assert mean[j] <= mean[i] + 0.02


def test_attack_then_gils_zero_eps_matches_gils():
    bench = blobs_benchmark(1)
    cfg = GilsConfig(PerturbConfig(), epochs=5, seed=1)
    _, plain = train_gils(cfg, bench.train, bench.test_shifted)
    for kind in KINDS:
        _, combo = attack_then_gils(AttackConfig(kind, epsilon=0.0), cfg, bench.train, bench.test_shifted)
        assert [r.params_checksum for r in combo.records] == [r.params_checksum for r in plain.records]
        assert combo.to_jsonl().replace('"attacked_gils"', '"gils"') == plain.to_jsonl()


def test_attack_then_gils_needs_an_attack():
    bench = blobs_benchmark(1)
    with pytest.raises(ConfigError):
        attack_then_gils(None, GilsConfig(epochs=1), bench.train)
