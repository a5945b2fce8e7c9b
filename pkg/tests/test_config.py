import pytest

from learnpool.config import ExperimentConfig, load_config, parse_config_text
from learnpool.errors import InvalidArgument


def test_parse_flat_text_with_comments():
    vals = parse_config_text("# experiment\nK = 32   # bigger\nablation = yes\n\nalpha3 = 0, 1e-2\n")
    assert vals == {"K": 32, "ablation": True, "alpha3": "0, 1e-2"}


def test_overrides_win_over_file(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("K = 8\nseed = 1\n")
    cfg = load_config(p, ["--seed=5", "--max-iters=7"])
    assert (cfg.K, cfg.seed, cfg.max_iters) == (8, 5, 7)


def test_defaults_are_desk_scale():
    cfg = ExperimentConfig()
    assert (cfg.train_limit, cfg.test_limit, cfg.K, cfg.prepool, cfg.max_iters) == \
        (10000, 2000, 16, 3, 500)
    assert cfg.patch_samples == 400000


def test_alpha_lists():
    cfg = load_config(None, ["--alpha1=0,1e-4, 1e-3"])
    assert cfg.alphas("alpha1") == [0.0, 1e-4, 1e-3]


@pytest.mark.parametrize("bad", [["--K=0"], ["--nope=1"], ["--K=abc"], ["--ablation=maybe"],
                                 ["--alpha2=-1"], ["--methods=spm_fixed,magic"], ["K=3=4x"],
                                 ["--subset=middle"], ["justtext"]])
def test_bad_values_rejected(bad):
    with pytest.raises(InvalidArgument):
        load_config(None, bad)


def test_missing_config_file(tmp_path):
    with pytest.raises(InvalidArgument, match="not found"):
        load_config(tmp_path / "none.cfg")


def test_line_without_equals(tmp_path):
    with pytest.raises(InvalidArgument, match=":2:"):
        parse_config_text("K = 3\nbroken line\n", "x.cfg")


def test_check_paths(tmp_path):
    cfg = load_config(None, [f"--train_path={tmp_path / 'missing.bin'}"])
    with pytest.raises(InvalidArgument, match="missing.bin"):
        cfg.check_paths("train_path")
