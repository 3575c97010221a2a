import csv

import pytest

from crossview import config
from crossview.cli import main
from crossview.errors import ValidationError

FAST = ["--M", "8", "--samples-per-identity-per-view", "3", "--max-epochs-per-phase", "3",
        "--warmup-epochs", "1", "--hidden-dims", "16", "--embed-dim", "8"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_generate_writes_expected_rows(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--M", "5", "--V", "3",
                 "--samples-per-identity-per-view", "2"]) == 0
    data = rows(tmp_path / "dataset.csv")
    assert len(data) == 5 * 3 * 2  # headerless


def test_generate_is_byte_identical(tmp_path):
    main(["generate", "--out", str(tmp_path / "a")])
    main(["generate", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/dataset.csv").read_bytes() == (tmp_path / "b/dataset.csv").read_bytes()
    main(["generate", "--out", str(tmp_path / "c"), "--seed", "1"])
    assert (tmp_path / "a/dataset.csv").read_bytes() != (tmp_path / "c/dataset.csv").read_bytes()


def test_generate_single_view_is_validation_error(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path), "--V", "1"]) == ValidationError.exit_code
    assert "V >= 2" in capsys.readouterr().err


def test_train_outputs(tmp_path):
    assert main(["train", "--out", str(tmp_path), *FAST, "--max-outer-iters", "2"]) == 0
    assert (tmp_path / "checkpoints/view0.ckpt").exists()
    assert (tmp_path / "checkpoints/view1.ckpt").exists()
    assert len(rows(tmp_path / "train_log.csv")) > 1
    phases = rows(tmp_path / "phases.csv")
    assert len(phases) - 2 == 4  # header, initial marker, four phase boundaries
    report = dict(rows(tmp_path / "report.csv")[1:])
    assert {"rank1", "rank5", "rank10", "rank20", "mAP", "crossview_distance"} <= set(report)


def test_eval_reproduces_train_report(tmp_path):
    main(["train", "--out", str(tmp_path), *FAST])
    assert main(["eval", "--out", str(tmp_path), *FAST]) == 0
    assert (tmp_path / "report.csv").read_bytes() == (tmp_path / "eval_report.csv").read_bytes()


def test_eval_missing_checkpoint_names_path(tmp_path, capsys):
    main(["train", "--out", str(tmp_path), *FAST])
    (tmp_path / "checkpoints/view1.ckpt").unlink()
    assert main(["eval", "--out", str(tmp_path), *FAST]) == 4
    assert "view1.ckpt" in capsys.readouterr().err


def test_eval_feature_mismatch(tmp_path):
    main(["train", "--out", str(tmp_path), *FAST])
    assert main(["eval", "--out", str(tmp_path), *FAST, "--D", "16"]) == 2


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--instances", "5"]) == 0
    assert main(["gradcheck", "--instances", "5", "--corrupt", "cv_ec"]) != 0
    assert "worst offender: cv_ec" in capsys.readouterr().out


def test_sweep_rows(tmp_path):
    assert main(["sweep", "--out", str(tmp_path), *FAST]) == 0
    table = rows(tmp_path / "sweep.csv")
    assert table[0] == ["lambda", "rank1", "mAP", "crossview_distance"]
    assert [float(r[0]) for r in table[1:]] == [0.0, 1e-3, 1e-1, 1e1]


def test_zero_lambda_run_has_larger_crossview_distance(tmp_path):
    main(["train", "--out", str(tmp_path / "a"), *FAST])
    main(["train", "--out", str(tmp_path / "b"), *FAST, "--lambda1", "0", "--lambda2", "0"])
    a = dict(rows(tmp_path / "a/report.csv")[1:])
    b = dict(rows(tmp_path / "b/report.csv")[1:])
    assert float(b["crossview_distance"]) > float(a["crossview_distance"])


def test_unknown_option_is_validation_error(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--bogus", "1"]) == 2


def test_missing_data_csv_is_io_error(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--csv", str(tmp_path / "nope.csv")]) == 4


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("# demo\n[generate]\nM = 12\n[train]\nlr = 0.01\nhidden_dims = 8, 8\n")
    cfg = config.load(path, ["--train.lr", "0.02"], root_seed=3)
    assert cfg.gen.M == 12 and cfg.train.lr == 0.02 and cfg.train.hidden_dims == (8, 8)
    assert cfg.gen.seed == config.derive_seed(3, "generate")
    path.write_text("[train]\nlr\n")
    with pytest.raises(ValidationError, match="line  ?2"):
        config.load(path)


def test_published_preset():
    cfg = config.load(overrides=["--preset", "published"])
    assert cfg.train.lr == 1e-4 and cfg.train.alpha == 1e-3
