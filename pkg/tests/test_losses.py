import math

import numpy as np
import pytest

from dapt import autodiff as ad
from dapt.autodiff import Tensor
from dapt.data import Split
from dapt.encoders import EncoderConfig, build_encoders, encode_image
from dapt.errors import ConfigError, ContractError, DatasetError, NumericalError
from dapt.losses import (
    LossWeights,
    clip_loss,
    compute_prototypes,
    gaussian_potential,
    inter_dispersion_loss,
    intra_dispersion_loss,
    random_prototypes,
    total_loss,
)
from dapt.rng import SplitMix64


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# weights


def test_loss_weights_validation():
    LossWeights(0.0, 0.0)
    with pytest.raises(ConfigError):
        LossWeights(-0.1, 0.0)
    with pytest.raises(ConfigError):
        LossWeights(0.0, 0.0, kernel_scale=0.0)
    with pytest.raises(ConfigError):
        LossWeights(0.0, 0.0, tau=0.0)
    assert LossWeights(1.0, 1.0).tau == 0.07
    assert LossWeights(1.0, 1.0).kernel_scale == 2.0


# ---------------------------------------------------------------------------
# clip loss


def test_clip_loss_uniform_cosines_is_log_c():
    d = 6
    w = np.eye(d)[:4]
    z = np.zeros((3, d))
    z[:, 5] = 1.0  # orthogonal to every text row: all cosines equal 0
    loss = clip_loss(Tensor(z), Tensor(w), [0, 1, 2], tau=0.5)
    assert math.isclose(float(loss.data), math.log(4.0), rel_tol=0, abs_tol=1e-12)


def test_clip_loss_known_scalar_case():
    # one sample, two classes, similarities (0.5, 0.3), tau=1
    w = np.array([[1.0, 0.0], [0.0, 1.0]])
    z = np.array([[0.5, 0.3]])
    loss = clip_loss(Tensor(z), Tensor(w), [0], tau=1.0, validate=False)
    expected = -math.log(math.exp(0.5) / (math.exp(0.5) + math.exp(0.3)))
    assert math.isclose(float(loss.data), expected, abs_tol=1e-12)
    assert round(expected, 4) == 0.5981


def test_clip_loss_sharp_limit_goes_to_zero():
    w = np.array([[1.0, 0.0], [-1.0, 0.0]])
    z = np.array([[1.0, 0.0]])  # cosine 1 with class 0, -1 with class 1
    loss = clip_loss(Tensor(z), Tensor(w), [0], tau=1e-3)
    assert float(loss.data) == 0.0


def test_clip_loss_contract_errors():
    rng = np.random.default_rng(0)
    w = unit_rows(rng, 3, 4)
    with pytest.raises(ContractError, match="empty"):
        clip_loss(Tensor(np.zeros((0, 4))), Tensor(w), [], tau=1.0)
    z_bad = unit_rows(rng, 2, 4) * 1.001
    with pytest.raises(ContractError, match="norm"):
        clip_loss(Tensor(z_bad), Tensor(w), [0, 1], tau=1.0)
    with pytest.raises(IndexError):
        clip_loss(Tensor(unit_rows(rng, 2, 4)), Tensor(w), [0, 3], tau=1.0)


def test_clip_loss_matches_loop_oracle():
    rng = np.random.default_rng(7)
    for _ in range(25):
        b, c, d = rng.integers(1, 8), rng.integers(2, 6), 5
        z = unit_rows(rng, b, d)
        w = unit_rows(rng, c, d)
        y = rng.integers(0, c, size=b).tolist()
        tau = float(rng.uniform(0.05, 1.0))
        got = float(clip_loss(Tensor(z), Tensor(w), y, tau).data)
        total = 0.0
        for i in range(b):
            logits = [float(z[i] @ w[j]) / tau for j in range(c)]
            m = max(logits)
            denom = sum(math.exp(v - m) for v in logits)
            total -= math.log(math.exp(logits[y[i]] - m) / denom)
        assert math.isclose(got, total / b, abs_tol=1e-12)


def test_clip_loss_nonnegative():
    rng = np.random.default_rng(1)
    for _ in range(10):
        z, w = unit_rows(rng, 4, 6), unit_rows(rng, 3, 6)
        y = rng.integers(0, 3, size=4).tolist()
        assert float(clip_loss(Tensor(z), Tensor(w), y, 0.07).data) >= 0.0


# ---------------------------------------------------------------------------
# gaussian potential and inter-dispersion


def test_potential_identical_vectors():
    v = Tensor([1.0, 0.0, 0.0])
    assert float(gaussian_potential(v, v, 2.0).data) == 1.0


def test_potential_antipodal_t2():
    a, b = Tensor([1.0, 0.0]), Tensor([-1.0, 0.0])
    assert math.isclose(float(gaussian_potential(a, b, 2.0).data), math.exp(-8.0), abs_tol=1e-12)


def test_potential_orthogonal_t2():
    a, b = Tensor([1.0, 0.0]), Tensor([0.0, 1.0])
    got = float(gaussian_potential(a, b, 2.0).data)
    assert math.isclose(got, math.exp(-4.0), abs_tol=1e-12)
    assert round(got, 6) == 0.018316


def test_potential_bounds_on_unit_vectors():
    rng = np.random.default_rng(2)
    for _ in range(50):
        w = unit_rows(rng, 2, 5)
        g = float(gaussian_potential(Tensor(w[0]), Tensor(w[1]), 2.0).data)
        assert 0.0 < g <= 1.0


def test_inter_identical_pair():
    w = np.tile([1.0, 0.0], (2, 1))
    assert float(inter_dispersion_loss(Tensor(w), 2.0).data) == 2.0


def test_inter_orthogonal_pair_t2():
    w = np.eye(2)
    got = float(inter_dispersion_loss(Tensor(w), 2.0).data)
    assert math.isclose(got, 2.0 * math.exp(-4.0), abs_tol=1e-12)
    assert round(got, 6) == 0.036631


def test_inter_identical_c_embeddings_is_c_times_c_minus_1():
    for c in (2, 3, 5, 8):
        w = np.tile([0.0, 1.0, 0.0], (c, 1))
        got = float(inter_dispersion_loss(Tensor(w), 2.0).data)
        assert math.isclose(got, c * (c - 1), abs_tol=1e-12)


def test_inter_matches_ordered_double_loop():
    rng = np.random.default_rng(3)
    for _ in range(25):
        c = int(rng.integers(2, 7))
        w = unit_rows(rng, c, 6)
        t = float(rng.uniform(0.5, 4.0))
        got = float(inter_dispersion_loss(Tensor(w), t).data)
        want = 0.0
        for m in range(c):
            for n in range(c):
                if m != n:
                    want += math.exp(-t * float(((w[m] - w[n]) ** 2).sum()))
        assert math.isclose(got, want, rel_tol=1e-12, abs_tol=1e-12)


def test_inter_requires_two_embeddings():
    with pytest.raises(ContractError):
        inter_dispersion_loss(Tensor(np.array([[1.0, 0.0]])), 2.0)


def test_inter_upper_bound():
    rng = np.random.default_rng(4)
    for c in (2, 4, 6):
        w = unit_rows(rng, c, 5)
        assert float(inter_dispersion_loss(Tensor(w), 2.0).data) <= c * (c - 1)


def test_inter_invariant_under_class_permutation_and_rotation():
    rng = np.random.default_rng(5)
    w = unit_rows(rng, 5, 6)
    base = float(inter_dispersion_loss(Tensor(w), 2.0).data)
    perm = w[rng.permutation(5)]
    assert math.isclose(float(inter_dispersion_loss(Tensor(perm), 2.0).data), base, rel_tol=1e-12)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    rotated = w @ q
    assert math.isclose(float(inter_dispersion_loss(Tensor(rotated), 2.0, validate=False).data),
                        base, rel_tol=1e-9)


def test_inter_decreases_when_one_embedding_moves_apart():
    # all points coincide; moving one to the antipode increases every one of
    # its pairwise distances, so the energy must drop
    w = np.tile([1.0, 0.0, 0.0], (4, 1))
    before = float(inter_dispersion_loss(Tensor(w), 2.0).data)
    moved = w.copy()
    moved[0] = [-1.0, 0.0, 0.0]
    after = float(inter_dispersion_loss(Tensor(moved), 2.0).data)
    assert after < before


# ---------------------------------------------------------------------------
# prototypes and intra-dispersion

TINY = EncoderConfig(d_model=8, d_embed=4, n_blocks=1, n_patches=2, prompt_len=2, seed=7)


def _split(n_per_class, classes=(0, 1), seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for c in classes:
        for _ in range(n_per_class):
            samples.append((rng.normal(size=(TINY.n_patches, TINY.d_model)), c))
    return Split(tuple(samples), tuple(classes))


def test_prototype_single_sample_is_that_embedding():
    pair = build_encoders(TINY, 2)
    split = _split(1)
    proto = compute_prototypes(pair, split)
    for i, c in enumerate(split.classes):
        tokens = [t for t, y in split.samples if y == c][0]
        want = encode_image(pair, tokens).data
        assert np.array_equal(proto.s[i], want)
        assert abs(np.linalg.norm(proto.s[i]) - 1.0) < 1e-12
    assert proto.counts == (1, 1)


def test_prototype_identical_samples():
    pair = build_encoders(TINY, 2)
    tokens = np.random.default_rng(1).normal(size=(TINY.n_patches, TINY.d_model))
    split = Split(((tokens, 0), (tokens.copy(), 0), (tokens.copy(), 1)), (0, 1))
    proto = compute_prototypes(pair, split)
    assert np.allclose(proto.s[0], encode_image(pair, tokens).data)


def test_prototype_mean_of_distinct_embeddings_is_inside_sphere():
    pair = build_encoders(TINY, 2)
    split = _split(4, seed=3)
    proto = compute_prototypes(pair, split)
    assert np.linalg.norm(proto.s[0]) < 1.0
    assert np.linalg.norm(proto.s[1]) < 1.0


def test_prototype_renormalize_flag():
    pair = build_encoders(TINY, 2)
    proto = compute_prototypes(pair, _split(4, seed=3), renormalize=True)
    assert np.abs(np.linalg.norm(proto.s, axis=1) - 1.0).max() < 1e-12


def test_prototype_missing_class_errors():
    pair = build_encoders(TINY, 2)
    split = Split(((np.zeros((TINY.n_patches, TINY.d_model)) + 0.5, 0),), (0, 1))
    with pytest.raises(DatasetError, match="class 1"):
        compute_prototypes(pair, split)


def test_random_prototypes_pick_real_embeddings():
    pair = build_encoders(TINY, 2)
    split = _split(3, seed=5)
    proto = random_prototypes(pair, split, SplitMix64(1))
    for i, c in enumerate(split.classes):
        cands = [encode_image(pair, t).data for t, y in split.samples if y == c]
        assert any(np.array_equal(proto.s[i], cand) for cand in cands)


def test_intra_zero_when_embeddings_equal_prototypes():
    rng = np.random.default_rng(6)
    s = unit_rows(rng, 3, 4)
    proto_like = type("P", (), {"s": s})()
    z = Tensor(s[[0, 1, 2, 0]])
    assert float(intra_dispersion_loss(z, [0, 1, 2, 0], proto_like).data) == 0.0


def test_intra_single_sample_distance_squared():
    s = np.array([[1.0, 0.0]])
    proto_like = type("P", (), {"s": s})()
    z = Tensor(np.array([[0.0, 1.0]]))
    assert float(intra_dispersion_loss(z, [0], proto_like).data) == 2.0


def test_intra_matches_loop_oracle():
    rng = np.random.default_rng(8)
    for _ in range(25):
        b, c, d = int(rng.integers(1, 9)), int(rng.integers(2, 6)), 4
        z = rng.normal(size=(b, d))
        s = rng.normal(size=(c, d))
        y = rng.integers(0, c, size=b).tolist()
        proto_like = type("P", (), {"s": s})()
        got = float(intra_dispersion_loss(Tensor(z), y, proto_like).data)
        want = sum(float(((z[i] - s[y[i]]) ** 2).sum()) for i in range(b))
        assert math.isclose(got, want, rel_tol=1e-12, abs_tol=1e-12)


def test_intra_missing_prototype_errors():
    proto_like = type("P", (), {"s": np.zeros((2, 3))})()
    with pytest.raises(IndexError):
        intra_dispersion_loss(Tensor(np.zeros((1, 3))), [2], proto_like)


# ---------------------------------------------------------------------------
# total loss


def test_total_loss_weighted_sum():
    w = LossWeights(0.5, 0.1)
    total = total_loss(Tensor(1.0), Tensor(2.0), Tensor(3.0), w)
    assert math.isclose(float(total.data), 2.3, abs_tol=1e-12)


def test_total_loss_zero_betas_equals_clip():
    w = LossWeights(0.0, 0.0)
    total = total_loss(Tensor(1.7), Tensor(99.0), Tensor(42.0), w)
    assert float(total.data) == 1.7


def test_total_loss_rejects_non_finite():
    w = LossWeights(1.0, 1.0)
    with pytest.raises(NumericalError, match="inter"):
        total_loss(Tensor(1.0), Tensor(float("nan")), Tensor(0.0), w)


def test_total_gradient_decomposes_into_weighted_component_gradients():
    # backprop each component separately and check the total's gradient is
    # exactly their beta-weighted sum
    rng = np.random.default_rng(12)
    w_const = Tensor(unit_rows(rng, 3, 4))
    s = rng.normal(size=(3, 4))
    proto_like = type("P", (), {"s": s})()
    y = [0, 2, 1]
    weights = LossWeights(0.4, 2.5, tau=0.3)
    z0 = rng.normal(size=(3, 4))

    def component_grad(build):
        z = Tensor(z0.copy(), requires_grad=True)
        ad.backward(build(z))
        return np.zeros_like(z0) if z.grad is None else z.grad

    g_clip = component_grad(lambda z: clip_loss(z, w_const, y, weights.tau, validate=False))
    g_intra = component_grad(lambda z: intra_dispersion_loss(z, y, proto_like))
    z = Tensor(z0.copy(), requires_grad=True)
    total = total_loss(clip_loss(z, w_const, y, weights.tau, validate=False),
                       inter_dispersion_loss(w_const, weights.kernel_scale, validate=False),
                       intra_dispersion_loss(z, y, proto_like), weights)
    ad.backward(total)
    assert np.allclose(z.grad, g_clip + weights.beta_v * g_intra, atol=1e-12)


def test_total_loss_gradient_is_weighted_sum_of_components():
    rng = np.random.default_rng(9)
    s = rng.normal(size=(2, 4))
    proto_like = type("P", (), {"s": s})()
    w_const = Tensor(unit_rows(rng, 2, 4))
    weights = LossWeights(0.7, 0.3, tau=0.5)

    def fn(z):
        zn = ad.l2_normalize(z)
        c = clip_loss(zn, w_const, [0, 1, 0], weights.tau, validate=False)
        i = inter_dispersion_loss(w_const, weights.kernel_scale, validate=False)
        a = intra_dispersion_loss(zn, [0, 1, 0], proto_like)
        return total_loss(c, i, a, weights)

    err = ad.grad_check(fn, Tensor(rng.normal(size=(3, 4))))
    assert err < 1e-5


# ---------------------------------------------------------------------------
# gradient checks of each loss w.r.t. embeddings


def test_losses_pass_grad_check_wrt_embeddings():
    worst = 0.0
    for seed in range(10):
        r = np.random.default_rng(seed)
        z0 = unit_rows(r, 3, 5)
        w0 = unit_rows(r, 4, 5)
        y = r.integers(0, 4, size=3).tolist()
        s = r.normal(size=(4, 5))
        proto_like = type("P", (), {"s": s})()

        worst = max(worst, ad.grad_check(
            lambda z: clip_loss(z, Tensor(w0), y, 0.3, validate=False), Tensor(z0)))
        worst = max(worst, ad.grad_check(
            lambda w: clip_loss(Tensor(z0), w, y, 0.3, validate=False), Tensor(w0)))
        worst = max(worst, ad.grad_check(
            lambda w: inter_dispersion_loss(w, 2.0, validate=False), Tensor(w0)))
        worst = max(worst, ad.grad_check(
            lambda z: intra_dispersion_loss(z, y, proto_like), Tensor(z0)))
    assert worst < 1e-5
