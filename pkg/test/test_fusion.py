import logging

import numpy as np
import pytest

from fusenet.exc import DimensionMismatch
from fusenet.fusion import (
    FusionState,
    compute_weights,
    consistency_loss,
    delta,
    estimate_sigma,
    irls_weight,
    layer_coefficients,
    pair_distances,
    pair_weights_to_layer_coeffs,
    rho,
    surrogate_loss,
)
from fusenet.network import LayerParams, NetworkSpec, ParamEnsemble, init_params
from fusenet.numerics import Rng

TINY = NetworkSpec(((1, 1), (1, 1)), ("identity", "identity"), "reconstruction")


def _random_ensemble(spec: NetworkSpec, n: int, seed: int) -> ParamEnsemble:
    return ParamEnsemble(spec, [init_params(spec, Rng(seed).child(i)) for i in range(n)])


def _table(entries: dict[tuple[int, int], float], n: int) -> np.ndarray:
    table = np.zeros((n, n, 1))
    for (i, j), d in entries.items():
        table[i, j, 0] = table[j, i, 0] = d
    return table


def test_rho_values():
    assert rho(0.0, 3.0) == 0.0
    assert rho(2.0, 2.0) == pytest.approx(2.0)
    assert rho(1e6, 1.0) == pytest.approx(1e12 / (1 + 1e12), abs=1e-15)
    assert rho(1e6, 1.0) < 1.0


def test_rho_identities_on_grid():
    x, sigma = np.meshgrid(np.linspace(0.0, 10.0, 100), np.linspace(0.01, 5.0, 100))
    values = rho(x, sigma)
    assert np.allclose(values, irls_weight(x, sigma) * x**2, rtol=1e-14, atol=1e-14)
    assert np.all(values <= np.minimum(x**2, sigma**2) * (1 + 1e-12))
    assert np.allclose(rho(sigma, sigma), sigma**2 / 2, rtol=1e-14)
    grid = np.linspace(0.01, 10.0, 500)
    for s in (0.5, 1.0, 5.0):
        assert np.all(np.diff(rho(grid, s)) > 0)


def test_pair_distances_examples():
    same = ParamEnsemble.from_flat(TINY, [np.arange(4.0)] * 3)
    assert np.array_equal(pair_distances(same), np.zeros((3, 3, 1)))

    ensemble = ParamEnsemble.from_flat(TINY, [np.array([1.0, 0.0, 2.0, 0.0]), np.array([4.0, 0.0, 6.0, 0.0])])
    table = pair_distances(ensemble)
    assert table[0, 1, 0] == pytest.approx(5.0)
    assert table[1, 0, 0] == table[0, 1, 0]

    with pytest.raises(DimensionMismatch):
        pair_distances(ParamEnsemble(TINY, []))


def test_pair_distances_single_layer_perturbation():
    spec = NetworkSpec.from_units([2, 3, 3, 2], ["tanh", "tanh", "identity"], "reconstruction")
    base = init_params(spec, Rng(4))
    eps = Rng(5).normal(0, 0.1, (3, 2))
    moved = [LayerParams(base[0].weights + eps, base[0].bias), base[1], base[2]]
    table = pair_distances(ParamEnsemble(spec, [base, moved]))
    norm = np.linalg.norm(eps)
    # layer 0 only belongs to pair 0
    assert table[0, 1, 0] == pytest.approx(norm, rel=1e-12)
    assert table[0, 1, 1] == 0.0

    flat = [np.concatenate([p.flat() for p in theta[:2]]) for theta in (base, moved)]
    assert table[0, 1, 0] == pytest.approx(np.linalg.norm(flat[0] - flat[1]), rel=1e-12)


def test_estimate_sigma_examples(caplog: pytest.LogCaptureFixture):
    assert estimate_sigma(_table({(0, 1): 1.0, (0, 2): 2.0, (1, 2): 3.0}, 3))[0] == pytest.approx(4 / 3)
    assert estimate_sigma(_table({(0, 1): 0.7}, 2))[0] == pytest.approx(0.7)

    with caplog.at_level(logging.WARNING, logger="fusenet.fusion"):
        floored = estimate_sigma(np.zeros((4, 4, 2)), param_scale=3.0)
    assert np.allclose(floored, 4e-8)
    assert "floor" in caplog.text

    with pytest.raises(DimensionMismatch):
        estimate_sigma(np.zeros((1, 1, 1)))


def test_estimate_sigma_permutation_invariant():
    table = pair_distances(_random_ensemble(TINY, 5, 1))
    perm = np.array([3, 0, 4, 2, 1])
    assert np.allclose(estimate_sigma(table), estimate_sigma(table[perm][:, perm]))


def test_compute_weights_values_and_scale():
    sigma = np.array([2.0])
    table = _table({(0, 1): 2.0, (0, 2): 6.0, (1, 2): 0.0}, 3)
    w = compute_weights(table, sigma)
    assert w[0, 1, 0] == pytest.approx(0.5)
    assert w[0, 2, 0] == pytest.approx(0.1)
    assert w[1, 2, 0] == 1.0
    assert np.array_equal(w, w.transpose(1, 0, 2))
    assert np.allclose(compute_weights(table * 7.5, sigma * 7.5), w, rtol=1e-14)
    with pytest.raises(DimensionMismatch):
        compute_weights(table, np.array([0.0]))


def test_consistency_loss():
    same = ParamEnsemble.from_flat(TINY, [np.ones(4)] * 3)
    assert consistency_loss(same, np.array([1.0])) == 0.0

    pair = ParamEnsemble.from_flat(TINY, [np.array([1.0, 0.0, 2.0, 0.0]), np.array([4.0, 0.0, 6.0, 0.0])])
    assert consistency_loss(pair, np.array([2.0])) == pytest.approx(4 * 25 / (4 + 25), rel=1e-14)

    spec = NetworkSpec.from_units([2, 3, 3, 2], ["tanh", "relu", "identity"], "reconstruction")
    ensemble = _random_ensemble(spec, 4, 9)
    sigma = np.array([0.3, 0.2])
    assert consistency_loss(ensemble, sigma) <= 6 * 2 * 0.3**2
    assert consistency_loss(ParamEnsemble(spec, ensemble.params[:1]), sigma) == 0.0


def test_surrogate_equals_robust_at_its_weights():
    spec = NetworkSpec.from_units([3, 4, 2, 3], ["tanh", "sigmoid", "identity"], "reconstruction")
    ensemble = _random_ensemble(spec, 5, 2)
    table = pair_distances(ensemble)
    sigma = estimate_sigma(table)
    assert surrogate_loss(table, compute_weights(table, sigma)) == pytest.approx(
        consistency_loss(ensemble, sigma), rel=1e-12
    )


def test_delta():
    w = np.full((3, 3, 2), 0.5)
    state = FusionState(sigma=np.ones(2), weights=w)
    with pytest.raises(ValueError):
        delta(state)
    state.advance(w.copy())
    assert delta(state) == 0.0
    moved = w.copy()
    moved[0, 2, 1] = moved[2, 0, 1] = 0.8
    state.advance(moved)
    assert delta(state) == pytest.approx(0.3)
    assert state.k == 2

    rng = Rng(3)
    before = rng.normal(0.5, 0.1, (4, 4, 3))
    after = before + rng.normal(0, 0.05, (4, 4, 3))
    state = FusionState(sigma=np.ones(3), weights=before)
    state.advance(after)
    scan = max(abs(after[i, j, l] - before[i, j, l]) for i in range(4) for j in range(i + 1, 4) for l in range(3))
    assert delta(state) == pytest.approx(scan, abs=0)


def test_pair_weights_to_layer_coeffs():
    assert pair_weights_to_layer_coeffs(np.ones(2), 3).tolist() == [1.0, 2.0, 1.0]
    assert pair_weights_to_layer_coeffs(np.array([0.4]), 2).tolist() == [0.4, 0.4]
    with pytest.raises(DimensionMismatch):
        pair_weights_to_layer_coeffs(np.ones(3), 3)


def test_pair_form_equals_layer_form():
    rng = Rng(21)
    for trial in range(100):
        L = 2 + trial % 5
        units = [int(u) for u in rng.integers(1, 4, size=L + 1)]
        spec = NetworkSpec.from_units(units, ["tanh"] * L, "cross_entropy")
        a, b = (init_params(spec, rng.child(2 * trial + k)) for k in range(2))
        w = rng.normal(0, 1, (L - 1,)) ** 2
        layer_diff = [np.sum((pa.flat() - pb.flat()) ** 2) for pa, pb in zip(a, b)]
        pair_form = sum(w[l] * (layer_diff[l] + layer_diff[l + 1]) for l in range(L - 1))
        layer_form = float(pair_weights_to_layer_coeffs(w, L) @ np.array(layer_diff))
        assert abs(pair_form - layer_form) <= 1e-12 * max(1.0, pair_form)


def test_layer_coefficients_tensor():
    weights = Rng(4).normal(0.5, 0.1, (3, 3, 2))
    weights = (weights + weights.transpose(1, 0, 2)) / 2
    c = layer_coefficients(weights, 3)
    assert c.shape == (3, 3, 3)
    assert np.all(c[np.arange(3), np.arange(3)] == 0.0)
    assert np.allclose(c[0, 1], pair_weights_to_layer_coeffs(weights[0, 1], 3))
    assert np.array_equal(c, c.transpose(1, 0, 2))
