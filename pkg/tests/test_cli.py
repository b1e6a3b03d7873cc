import json

from osplab.cli import build_parser, main


def test_run_echoes_config_and_summary(tmp_path, capsys):
    rc = main(["run", "--sync", "osp", "--workers", "4", "--epochs", "1", "--seed", "7", "--out", str(tmp_path),
               "--no-trace"])
    assert rc == 0
    out = capsys.readouterr().out
    cfg_text, summary = out[:out.rindex("{")], out[out.rindex("{"):]
    assert json.loads(cfg_text)["seed"] == 7
    assert json.loads(summary)["iterations"] > 0
    assert (tmp_path / "metrics.csv").exists() and not (tmp_path / "trace.tsv").exists()


def test_config_error_exit_code(capsys):
    assert main(["run", "--workers", "0"]) == 2
    assert "workers" in capsys.readouterr().err


def test_config_file_with_flag_override(tmp_path, capsys):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"workers": 3, "epochs": 1, "model_widths": [16, 8, 4]}))
    assert main(["run", "--config", str(f), "--workers", "2", "--model-widths", "16,4"]) == 0
    cfg = json.loads(capsys.readouterr().out.split("\n}\n")[0] + "\n}")
    assert cfg["workers"] == 2 and cfg["model_widths"] == [16, 4] and cfg["epochs"] == 1
    assert cfg["provenance"]["workers"] == "flag (overrides file)"


def test_compare_subset(tmp_path, capsys):
    rc = main(["compare", "--models", "bsp,osp", "--epochs", "1", "--workers", "2", "--out", str(tmp_path)])
    assert rc == 0
    assert "relative_throughput" in capsys.readouterr().out
    assert (tmp_path / "comparison.csv").read_text().count("\n") == 3


def test_check_subset(capsys):
    assert main(["check", "--only", "4,9"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines] == ["[PASS]", "[PASS]"]


def test_parser_flags():
    args = build_parser().parse_args(["run", "--eq5-literal", "--stragglers", "1,2.5", "--loss-rate", "0.1"])
    assert args.eq5_literal is True and args.stragglers == [1.0, 2.5] and args.loss_rate == 0.1
