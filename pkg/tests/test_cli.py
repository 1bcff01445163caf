"""CLI subcommands, exit codes, and output-file contracts."""

import pytest

from stepdistill.cli import main

FAST_CFG = """
dataset_count = 8
eval_count = 2
num_classes = 2
scale_shapes = 8x8,4x4
batch_size = 4
total_steps = 20
warmup_end_step = 4
switch_step = 10
freeze_end_step = 4
decay_start_step = 10
decay_interval = 5
end_step = 20
eval_interval = 5
lambda1 = 20
lambda2 = 25
"""


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(FAST_CFG)
    return str(path)


def test_missing_config_file_names_path(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "nope.cfg")])
    assert code == 1
    assert "nope.cfg" in capsys.readouterr().err


def test_unknown_set_key_is_validation_error(fast_config, tmp_path, capsys):
    code = main(["train", "--config", fast_config, "--out", str(tmp_path / "o"),
                 "--set", "bogus=1"])
    assert code == 1
    assert "bogus" in capsys.readouterr().err


def test_train_outputs_and_determinism(fast_config, tmp_path, capsys):
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    assert main(["train", "--config", fast_config, "--out", str(out1)]) == 0
    assert main(["train", "--config", fast_config, "--out", str(out2)]) == 0
    capsys.readouterr()

    runlog = (out1 / "runlog.csv").read_text()
    assert runlog.splitlines()[0] == "step,lr,lambda,l_det,l_distill,ratio,ap_surrogate"
    assert len(runlog.splitlines()) == 21  # header + 20 steps
    assert (out1 / "checkpoint.ckpt").exists()
    assert (out1 / "ap_report.csv").read_text().splitlines()[0] == "ap,ap50,ap75,aps,apm,apl"
    assert (out1 / "run_meta.txt").exists()

    # byte-identical CSV bodies across reruns
    assert (out1 / "runlog.csv").read_bytes() == (out2 / "runlog.csv").read_bytes()
    assert (out1 / "ap_report.csv").read_bytes() == (out2 / "ap_report.csv").read_bytes()

    def config_sans_outdir(path):
        return [ln for ln in path.read_text().splitlines() if not ln.startswith("out_dir")]

    assert config_sans_outdir(out1 / "config.cfg") == config_sans_outdir(out2 / "config.cfg")


def test_lambda_zero_override_equals_baseline(fast_config, tmp_path, capsys):
    out_zero = tmp_path / "zero"
    out_none = tmp_path / "none"
    assert main(["train", "--config", fast_config, "--out", str(out_zero),
                 "--set", "lambda1=0", "--set", "lambda2=0"]) == 0
    assert main(["train", "--config", fast_config, "--out", str(out_none),
                 "--set", "lambda1=0", "--set", "lambda2=0",
                 "--set", "loss_id=none"]) == 0
    capsys.readouterr()
    assert (out_zero / "ap_report.csv").read_bytes() == (out_none / "ap_report.csv").read_bytes()


def test_train_divergence_exit_code_and_partial_log(fast_config, tmp_path, capsys):
    out = tmp_path / "boom"
    code = main(["train", "--config", fast_config, "--out", str(out),
                 "--set", "base_rate=80.0", "--set", "freeze_end_step=0",
                 "--set", "warmup_end_step=0"])
    assert code == 2
    assert (out / "runlog.csv").exists()  # partial log preserved
    assert "step" in capsys.readouterr().err


def test_calibrate_analytic_matches_closed_form(tmp_path, capsys):
    out = tmp_path / "cal"
    code = main(["calibrate", "--analytic", "--det-loss", "1.0", "--distill-loss", "0.1",
                 "--target", "0.45", "--tolerance", "1e-5", "--out", str(out)])
    assert code == 0
    stdout = capsys.readouterr().out
    lam = float([ln for ln in stdout.splitlines() if ln.startswith("lambda_star")][0].split()[1])
    assert abs(lam - 0.45 / (0.55 * 0.1)) < 1e-3
    trace = (out / "probe_trace.csv").read_text().splitlines()
    assert trace[0] == "probe,lambda,ratio"
    assert len(trace) > 2


def test_calibrate_rejects_target_zero(capsys):
    assert main(["calibrate", "--analytic", "--target", "0"]) == 1
    assert "target" in capsys.readouterr().err


def test_calibrate_bracket_failure_exit_code(tmp_path, capsys):
    code = main(["calibrate", "--analytic", "--det-loss", "1.0", "--distill-loss", "0.1",
                 "--target", "0.99", "--lo", "1", "--hi", "10", "--out", str(tmp_path / "c")])
    assert code == 3
    err = capsys.readouterr().err
    assert "not bracketed" in err and "r(" in err


def test_compare_shape_and_determinism(fast_config, tmp_path, capsys):
    spec = tmp_path / "cmp.spec"
    spec.write_text(
        "seeds = 0,1\n"
        + "".join(f"base.{ln}\n" for ln in FAST_CFG.strip().splitlines() if ln.strip())
        + "variant.fixed1.lambda1 = 20\n"
        + "variant.fixed1.lambda2 = 20\n"
        + "variant.fixed2.lambda1 = 25\n"
        + "variant.fixed2.lambda2 = 25\n"
        + "variant.stepwise.lambda1 = 20\n"
        + "variant.stepwise.lambda2 = 25\n"
    )
    out = tmp_path / "cmp"
    assert main(["compare", str(spec), "--out", str(out)]) == 0
    capsys.readouterr()
    lines = (out / "comparison.csv").read_text().splitlines()
    assert lines[0] == "variant,seed,status,ap,ap50,ap75,aps,apm,apl"
    data = [ln for ln in lines if ln and not ln.startswith("#")][1:]
    assert len(data) == 6  # 3 variants x 2 seeds
    assert data == sorted(data)  # merged deterministically by (variant, seed)
    summary = [ln for ln in lines if ln.startswith("#")]
    assert any("majority_winner" in ln for ln in summary)
    assert sum("winner seed=" in ln for ln in summary) == 2


def test_compare_identical_variants_tie(fast_config, tmp_path, capsys):
    spec = tmp_path / "tie.spec"
    spec.write_text(
        "seeds = 0\n"
        + "".join(f"base.{ln}\n" for ln in FAST_CFG.strip().splitlines() if ln.strip())
        + "variant.a.lambda1 = 20\n"
        + "variant.b.lambda1 = 20\n"
    )
    out = tmp_path / "tie"
    assert main(["compare", str(spec), "--out", str(out)]) == 0
    capsys.readouterr()
    lines = (out / "comparison.csv").read_text().splitlines()
    row_a = next(ln for ln in lines if ln.startswith("a,0,"))
    row_b = next(ln for ln in lines if ln.startswith("b,0,"))
    assert row_a.split(",")[2:] == row_b.split(",")[2:]
    assert any("(tie)" in ln for ln in lines if "winner seed=0" in ln)


def test_gradcheck_passes_for_each_loss(capsys):
    assert main(["gradcheck", "--loss", "mse", "--trials", "5"]) == 0
    assert main(["gradcheck", "--loss", "js", "--trials", "5"]) == 0
    assert main(["gradcheck", "--loss", "kl", "--trials", "5"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out


def test_gradcheck_unknown_loss(capsys):
    assert main(["gradcheck", "--loss", "cosine"]) == 1
    assert "cosine" in capsys.readouterr().err


def test_gradcheck_threshold_breach_reports_worst_case(capsys):
    code = main(["gradcheck", "--loss", "js", "--trials", "3", "--threshold", "0"])
    assert code == 2
    err = capsys.readouterr().err
    assert "seed" in err and "element" in err


def test_unknown_subcommand_is_validation_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 1
