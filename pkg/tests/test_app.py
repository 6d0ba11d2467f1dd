import os

import pytest

from nfa_vit.app import main
from nfa_vit.config import SEED_ENV, RunConfig
from nfa_vit.dataset import MANIFEST, read_manifest
from nfa_vit.training import CONFIG_FILE

from conftest import tiny_run_config


@pytest.fixture
def config_file(tmp_path):
    path = str(tmp_path / "tiny.txt")
    tiny_run_config().save(path)
    return path


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def test_selfcheck_without_model(capsys):
    assert main(["--quiet", "selfcheck", "--skip-model"]) == 0
    out = capsys.readouterr().out
    assert "PASS grad matmul" in out
    assert "FAIL" not in out


def test_dry_run_echoes_resolved_config(capsys, monkeypatch, config_file):
    monkeypatch.setenv(SEED_ENV, "7")
    assert main(["--config", config_file, "train", "--data", "unused", "--out", "unused", "--dry-run",
                 "--ablate", "+noise"]) == 0
    config = RunConfig.from_text(capsys.readouterr().out)
    assert config.seed == 7
    assert (config.use_noise, config.use_naa, config.weighted_decoder) == (True, False, False)


def test_seed_flag_overrides_config(capsys, config_file):
    assert main(["--config", config_file, "train", "--data", "d", "--out", "o", "--dry-run", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "seed = 3" in out
    assert "overridden by --seed 3" in out


def test_gen_data(tmp_path, capsys, config_file):
    out = str(tmp_path / "data")
    assert main(["--quiet", "--config", config_file, "gen-data", "--out", out, "--seed", "2"]) == 0
    assert len(read_manifest(out)) == 16
    assert RunConfig.load(os.path.join(out, CONFIG_FILE)).seed == 2
    assert "train" in capsys.readouterr().out


def test_gen_data_is_repeatable(tmp_path, config_file):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for root in (a, b):
        assert main(["--quiet", "--config", config_file, "--threads", "2", "gen-data", "--out", root]) == 0
    with open(os.path.join(a, MANIFEST), "rb") as fa, open(os.path.join(b, MANIFEST), "rb") as fb:
        assert fa.read() == fb.read()


@pytest.mark.parametrize("argv", [
    ["sweep-topk", "--data", "d", "--out", "o", "--ratios", ""],
    ["sweep-topk", "--data", "d", "--out", "o", "--ratios", "0.1,2"],
    ["sweep-ablation", "--data", "d", "--out", "o", "--variants", "+naa"],
    ["eval", "--data", "d", "--out", "o"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_checkpoint_exits_2(tmp_path, tiny_corpus, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "nothing"), "--data", tiny_corpus,
                 "--out", str(tmp_path / "eval")])
    assert code == 2
    assert "manifest" in capsys.readouterr().err


def test_bad_config_file_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("seed = 1\ncolour = red\n", encoding="utf-8")
    assert main(["--config", str(path), "gen-data", "--out", str(tmp_path / "d")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_argparse_rejects_unknown_ablation():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", "d", "--out", "o", "--ablate", "+naa"])
    assert exc.value.code == 2


def test_baseline_eval_with_robustness(tmp_path, tiny_corpus):
    out = str(tmp_path / "eval")
    assert main(["--quiet", "eval", "--baseline", "--data", tiny_corpus, "--out", out, "--robust",
                 "--by-area", "--by-kind"]) == 0
    with open(os.path.join(out, "metrics.csv"), encoding="utf-8") as f:
        metrics = f.read()
    assert metrics.startswith("slice,count,forged,metric,value\noverall,")
    assert "area=<20%" in metrics
    with open(os.path.join(out, "robustness.csv"), encoding="utf-8") as f:
        header = f.readline().strip()
    assert header == "row,clean,gauss_noise_1,gauss_noise_3,gauss_blur_1,gauss_blur_3,jpeg_95,jpeg_75"
    assert os.path.isfile(os.path.join(out, CONFIG_FILE))


@pytest.mark.slow
def test_train_then_eval(tmp_path, tiny_corpus, config_file):
    run = str(tmp_path / "run")
    assert main(["--quiet", "--config", config_file, "train", "--data", tiny_corpus, "--out", run]) == 0
    out = str(tmp_path / "eval")
    assert main(["--quiet", "eval", "--checkpoint", os.path.join(run, "best"), "--data", tiny_corpus,
                 "--out", out, "--by-kind"]) == 0
    assert os.path.isfile(os.path.join(out, "metrics.csv"))


@pytest.mark.slow
def test_topk_sweep(tmp_path, tiny_corpus, config_file):
    out = str(tmp_path / "sweep")
    assert main(["--quiet", "--config", config_file, "sweep-topk", "--data", tiny_corpus, "--out", out,
                 "--ratios", "0.25,0.5"]) == 0
    with open(os.path.join(out, "ablation.csv"), encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[0] == "top_k_ratio,seed,gen_recall_50,real_recall_50,mean_iou"
    assert [line.split(",")[0] for line in lines[1:]] == ["0.25", "0.5"]
