import numpy as np
import pytest

from dapt import autodiff as ad
from dapt.autodiff import Tensor
from dapt.encoders import (
    EncoderConfig,
    build_encoders,
    encode_image,
    encode_text,
    weight_checksum,
)
from dapt.errors import ConfigError, ShapeError
from dapt.prompts import init_prompts
from dapt.rng import SplitMix64

TINY = EncoderConfig(d_model=8, d_embed=4, n_blocks=1, n_patches=3, prompt_len=2, seed=7)


@pytest.fixture(scope="module")
def tiny_pair():
    return build_encoders(TINY, 4)


def _tokens(seed=0, cfg=TINY):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(cfg.n_patches, cfg.d_model))


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(d_model=8, d_embed=9)
    with pytest.raises(ConfigError):
        EncoderConfig(n_blocks=0)
    assert EncoderConfig().prompt_len == 16


def test_build_rejects_single_class():
    with pytest.raises(ConfigError):
        build_encoders(TINY, 1)


def test_same_seed_identical_checksums():
    a = build_encoders(EncoderConfig(seed=7), 4)
    b = build_encoders(EncoderConfig(seed=7), 4)
    assert weight_checksum(a) == weight_checksum(b)


def test_different_seed_differs():
    a = build_encoders(EncoderConfig(seed=7), 4)
    b = build_encoders(EncoderConfig(seed=8), 4)
    assert weight_checksum(a) != weight_checksum(b)


def test_weight_generator_mean():
    # law of large numbers on the documented generator: 10^4 draws of
    # Gaussian(0, (1/sqrt(32))^2) have |mean| below 3 sigma/sqrt(n)
    stream = SplitMix64(7)
    std = 1.0 / np.sqrt(32.0)
    draws = [stream.next_gaussian() * std for _ in range(10_000)]
    assert abs(np.mean(draws)) <= 3.0 * std / np.sqrt(10_000)


def test_image_output_unit_norm(tiny_pair):
    out = encode_image(tiny_pair, _tokens())
    assert abs(np.linalg.norm(out.data) - 1.0) < 1e-12
    prompts = init_prompts(TINY, 1)
    out = encode_image(tiny_pair, _tokens(), prompts.visual)
    assert abs(np.linalg.norm(out.data) - 1.0) < 1e-12


def test_text_output_unit_norm(tiny_pair):
    prompts = init_prompts(TINY, 1)
    for c in range(4):
        for prompt in (None, prompts.text):
            out = encode_text(tiny_pair, c, prompt)
            assert abs(np.linalg.norm(out.data) - 1.0) < 1e-12


def test_encode_deterministic(tiny_pair):
    prompts = init_prompts(TINY, 3)
    a = encode_image(tiny_pair, _tokens(5), prompts.visual)
    b = encode_image(tiny_pair, _tokens(5), prompts.visual)
    assert np.array_equal(a.data, b.data)


def test_prompt_changes_image_output(tiny_pair):
    prompts = init_prompts(TINY, 2)
    bare = encode_image(tiny_pair, _tokens(1))
    prompted = encode_image(tiny_pair, _tokens(1), prompts.visual)
    assert not np.allclose(bare.data, prompted.data)


def test_distinct_classes_distinct_embeddings(tiny_pair):
    a = encode_text(tiny_pair, 0)
    b = encode_text(tiny_pair, 1)
    assert not np.allclose(a.data, b.data)


def test_zero_prompt_differs_from_absent_prompt(tiny_pair):
    zero = Tensor(np.zeros((TINY.prompt_len, TINY.d_model)))
    with_zero = encode_text(tiny_pair, 0, zero)
    without = encode_text(tiny_pair, 0)
    assert not np.allclose(with_zero.data, without.data)


def test_wrong_token_shape(tiny_pair):
    with pytest.raises(ShapeError):
        encode_image(tiny_pair, np.ones((TINY.n_patches + 1, TINY.d_model)))
    with pytest.raises(ShapeError):
        encode_image(tiny_pair, np.ones((TINY.n_patches, TINY.d_model)),
                     Tensor(np.ones((3, TINY.d_model))))


def test_class_index_out_of_range(tiny_pair):
    with pytest.raises(IndexError):
        encode_text(tiny_pair, 4)
    with pytest.raises(IndexError):
        encode_text(tiny_pair, -1)


def test_gradients_reach_prompts_only(tiny_pair):
    prompts = init_prompts(TINY, 4)
    z = encode_image(tiny_pair, _tokens(2), prompts.visual)
    w = encode_text(tiny_pair, 1, prompts.text)
    ad.backward(ad.sq_dist(z, w))
    assert prompts.visual.grad is not None and np.abs(prompts.visual.grad).max() > 0
    assert prompts.text.grad is not None and np.abs(prompts.text.grad).max() > 0
    for blocks in (tiny_pair.image_blocks, tiny_pair.text_blocks):
        for bw in blocks:
            for w_ in (bw.wq, bw.wk, bw.wv, bw.wo, bw.w1, bw.w2):
                assert w_.grad is None
    assert tiny_pair.class_table.grad is None
    assert tiny_pair.cls_token.grad is None


def test_encoder_gradients_match_finite_differences(tiny_pair):
    tokens = _tokens(9)
    worst = 0.0
    for seed in range(5):
        prompts = init_prompts(TINY, seed)

        def fn_visual(v):
            return ad.sq_dist(encode_image(tiny_pair, tokens, v),
                              encode_text(tiny_pair, 0))

        def fn_text(t):
            return ad.sq_dist(encode_text(tiny_pair, 1, t),
                              encode_image(tiny_pair, tokens))

        worst = max(worst, ad.grad_check(fn_visual, prompts.visual))
        worst = max(worst, ad.grad_check(fn_text, prompts.text))
    assert worst < 1e-5


def test_readout_position_stable_under_prompt_insertion(tiny_pair):
    # CLS stays at position 0 with or without a visual prompt: editing the
    # cls token changes the output either way, editing the last patch's
    # readout position does not exist to displace.  For text, the class token
    # is read at the last position whether or not a prompt precedes it.
    prompts = init_prompts(TINY, 6)
    base = encode_image(tiny_pair, _tokens(3), prompts.visual).data
    # permuting patch tokens leaves the CLS readout unchanged: attention is a
    # permutation-invariant aggregation and the readout position is fixed
    perm_tokens = _tokens(3)[::-1].copy()
    permuted = encode_image(tiny_pair, perm_tokens, prompts.visual).data
    assert np.allclose(base, permuted, atol=1e-12)
    # the text readout tracks the class token, so two classes differ even
    # under the same prompt while sharing every other token
    a = encode_text(tiny_pair, 0, prompts.text).data
    b = encode_text(tiny_pair, 2, prompts.text).data
    assert not np.allclose(a, b)
