import math

import numpy as np
import pytest

from dapt.encoders import EncoderConfig
from dapt.errors import PromptFormatError, PromptParseError
from dapt.prompts import (
    DEFAULT_TEXT_STD,
    init_prompts,
    load_prompts,
    save_prompts,
    xavier_bound,
)

CFG = EncoderConfig()  # prompt_len 16, d_model 32


def test_text_std_parameter_is_0_02():
    assert DEFAULT_TEXT_STD == 0.02


def test_text_prompt_sample_std_near_002():
    prompts = init_prompts(CFG, 123)
    std = float(prompts.text.data.std())
    assert 0.014 <= std <= 0.026  # 0.02 within 30%


def test_visual_prompt_within_xavier_bound():
    a = xavier_bound(CFG.prompt_len, CFG.d_model)
    assert math.isclose(a, math.sqrt(6.0 / 48.0))
    prompts = init_prompts(CFG, 5)
    assert float(np.abs(prompts.visual.data).max()) <= a


def test_same_seed_identical_prompts():
    a = init_prompts(CFG, 9)
    b = init_prompts(CFG, 9)
    assert np.array_equal(a.text.data, b.text.data)
    assert np.array_equal(a.visual.data, b.visual.data)


def test_prompts_require_grad_and_shapes():
    p = init_prompts(CFG, 1)
    assert p.text.requires_grad and p.visual.requires_grad
    assert p.text.data.shape == (16, 32)
    assert p.visual.data.shape == (16, 32)


def test_snapshot_is_detached():
    p = init_prompts(CFG, 2)
    snap = p.snapshot()
    assert not snap.text.requires_grad
    snap.text.data[0, 0] += 1.0
    assert p.text.data[0, 0] != snap.text.data[0, 0]


def test_save_load_round_trip(tmp_path):
    p = init_prompts(CFG, 42)
    path = tmp_path / "p.dapt"
    save_prompts(p, path)
    loaded = load_prompts(path)
    assert np.array_equal(loaded.text.data, p.text.data)
    assert np.array_equal(loaded.visual.data, p.visual.data)


def test_round_trip_fuzz_many_shapes(tmp_path):
    rng = np.random.default_rng(7)
    from dapt.autodiff import Tensor
    from dapt.prompts import PromptSet
    for trial in range(10):
        L, d = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        p = PromptSet(Tensor(rng.normal(size=(L, d)), requires_grad=True),
                      Tensor(rng.normal(size=(L, d)), requires_grad=True))
        path = tmp_path / f"fuzz_{trial}.dapt"
        save_prompts(p, path)
        loaded = load_prompts(path)
        assert np.array_equal(loaded.text.data, p.text.data)
        assert np.array_equal(loaded.visual.data, p.visual.data)


def test_truncated_file_is_parse_error(tmp_path):
    p = init_prompts(CFG, 1)
    path = tmp_path / "p.dapt"
    save_prompts(p, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 13])  # mid-row cut
    with pytest.raises(PromptParseError) as err:
        load_prompts(path)
    assert err.value.offset > 0


def test_row_count_mismatch_is_format_error(tmp_path):
    p = init_prompts(CFG, 1)
    path = tmp_path / "p.dapt"
    save_prompts(p, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 32 * 8])  # drop exactly one row
    with pytest.raises(PromptFormatError, match="rows"):
        load_prompts(path)


def test_bad_magic_is_parse_error(tmp_path):
    path = tmp_path / "p.dapt"
    path.write_bytes(b"NOPE1\n16 32\n" + b"\x00" * (2 * 16 * 32 * 8))
    with pytest.raises(PromptParseError):
        load_prompts(path)


def test_unreadable_dimensions_is_parse_error(tmp_path):
    path = tmp_path / "p.dapt"
    path.write_bytes(b"DAPT1\nsixteen 32\n")
    with pytest.raises(PromptParseError):
        load_prompts(path)
