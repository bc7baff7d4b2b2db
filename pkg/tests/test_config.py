import pytest
from hypothesis import given, strategies as st

from idsr import config as C
from idsr.errors import ConfigError


def test_defaults_round_trip():
    cfg = C.RunConfig()
    assert C.loads(C.dumps(cfg)) == cfg


@given(st.integers(4, 64), st.floats(0.1, 0.9), st.sampled_from(["recon", "ssim", "recog", "joint"]),
       st.floats(1e-5, 1e-1), st.integers(0, 2**31 - 1))
def test_parse_serialise_fixed_point(n, frac, loss, lr, seed):
    cfg = C.RunConfig(n_identities=n, train_fraction=frac, loss=loss, lr=lr, seed=seed)
    text = C.dumps(cfg)
    assert C.dumps(C.loads(text)) == text
    assert C.loads(text) == cfg


def test_comments_and_tuples():
    cfg = C.loads("# header\nseed = 3  # trailing\n\ngen_channels = 8, 8, 4, 2\n")
    assert cfg.seed == 3 and cfg.gen_channels == (8, 8, 4, 2)


@pytest.mark.parametrize("text, msg", [
    ("colour = red\n", "unknown key"),
    ("seed = 1\nseed = 2\n", "duplicate"),
    ("seed 1\n", "key = value"),
    ("seed = one\n", "cannot parse"),
    ("hr_size = 60\n", "multiple"),
    ("loss = gan\n", "unknown loss"),
])
def test_rejections(text, msg):
    with pytest.raises(ConfigError, match=msg):
        C.loads(text)


def test_file_round_trip(tmp_path):
    cfg = C.RunConfig(seed=9, generator_epochs=2)
    C.save(tmp_path / "run.cfg", cfg)
    assert C.load(tmp_path / "run.cfg") == cfg


def test_negatives_zero_means_all():
    assert C.RunConfig(negatives_per_probe=0).pairs_negatives is None
