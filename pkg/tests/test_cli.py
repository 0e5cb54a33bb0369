"""Tests for the command-line interface."""

import json

import numpy as np
import pytest

from cfkit.cli import _parse_resolution, build_parser, main
from cfkit.config import micro_config, stem_only_config
from cfkit.exceptions import UsageError
from cfkit.gme import ImageU8, load_image, save_ppm
from cfkit.main import build_model
from cfkit.types import CostReport, GradCheckReport, SuiteReport
from cfkit.weights import load_weights, save_weights


@pytest.fixture
def image_path(tmp_path):
    """A 64x64 random RGB image matching the micro config."""
    data = np.random.default_rng(0).integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
    path = tmp_path / "in.ppm"
    save_ppm(ImageU8.from_array(data), path)
    return path


def test_parse_resolution():
    """Test N and HxW forms."""
    assert _parse_resolution("448") == [448, 448]
    assert _parse_resolution("512x256") == [512, 256]
    with pytest.raises(UsageError):
        _parse_resolution("big")
    with pytest.raises(UsageError):
        _parse_resolution("0")


def test_subcommand_required():
    """Test the parser refuses a bare invocation."""
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_inspect_stem_only(capsys):
    """Test the stem-only tree has two nodes and the footer counts its parameters."""
    assert main(["inspect", "--config", "stem-only"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("stem.conv ")
    assert lines[-1] == "stem-only: 2 nodes, 752 parameters (0.00M)"


def test_inspect_seg512_total(capsys):
    """Test the default preset reports the full parameter count."""
    assert main(["inspect"]) == 0
    footer = capsys.readouterr().out.strip().splitlines()[-1]
    assert "1,761,478 parameters (1.76M)" in footer


def test_inspect_json(tmp_path):
    """Test JSON output re-parses as a report."""
    out = tmp_path / "params.json"
    assert main(["inspect", "--config", "micro", "--format", "json", "--out", str(out)]) == 0
    report = CostReport.model_validate_json(out.read_text())
    assert report.config_name == "contextformer-micro"
    assert report.total.params > 0


def test_inspect_resolution_override(capsys):
    """Test --resolution changes the reported shapes."""
    assert main(["inspect", "--config", "stem-only", "--resolution", "32x16"]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert "1x16x16x8" in first


def test_bad_resolution_is_usage_error(capsys):
    """Test a resolution the config cannot take exits with status 2."""
    assert main(["inspect", "--resolution", "100"]) == 2
    assert "input_h" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    """Test a config path that does not exist exits with status 2."""
    assert main(["inspect", "--config", str(tmp_path / "nope.json")]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_profile_json(tmp_path):
    """Test profile writes a report with a latency record."""
    out = tmp_path / "profile.json"
    assert main(["profile", "--config", "micro", "--warmup", "0", "--iters", "1", "--out", str(out)]) == 0
    report = CostReport.model_validate_json(out.read_text())
    assert report.latency is not None
    assert report.latency.measure_iters == 1
    assert report.input_shape == [1, 5, 64, 64]


def test_profile_bad_thread_env(monkeypatch, capsys):
    """Test a non-integer CFKIT_THREADS is a usage error."""
    monkeypatch.setenv("CFKIT_THREADS", "many")
    assert main(["profile", "--config", "micro", "--iters", "1"]) == 2
    assert "CFKIT_THREADS" in capsys.readouterr().err


def test_infer_is_deterministic(tmp_path, image_path):
    """Test two runs give byte-identical masks and logits of the expected shape."""
    outputs = []
    for i in range(2):
        mask = tmp_path / f"mask{i}.ppm"
        logits = tmp_path / f"logits{i}.cfw"
        argv = ["infer", "--config", "micro", "--image", str(image_path), "--out", str(mask), "--logits", str(logits)]
        assert main(argv) == 0
        outputs.append((mask.read_bytes(), logits.read_bytes()))
    assert outputs[0] == outputs[1]
    img = load_image(tmp_path / "mask0.ppm")
    assert (img.width, img.height) == (64, 64)
    assert load_weights(tmp_path / "logits0.cfw")["logits"].shape == (1, 8, 8, 8)


def test_infer_with_weights(tmp_path, image_path):
    """Test --weights loads a matching file and rejects one from another model."""
    _, params = build_model(micro_config(), seed=5)
    good = tmp_path / "good.cfw"
    save_weights(params, good)
    out = tmp_path / "mask.ppm"
    base = ["infer", "--config", "micro", "--image", str(image_path), "--out", str(out)]
    assert main(base + ["--weights", str(good)]) == 0

    _, other = build_model(stem_only_config())
    bad = tmp_path / "bad.cfw"
    save_weights(other, bad)
    assert main(base + ["--weights", str(bad)]) == 1


def test_infer_no_gme_conflict(tmp_path, image_path, capsys):
    """Test --no-gme with a 5-channel config exits with status 2."""
    argv = ["infer", "--config", "micro", "--image", str(image_path), "--out", str(tmp_path / "m.ppm"), "--no-gme"]
    assert main(argv) == 2
    assert "--no-gme" in capsys.readouterr().err


def test_infer_no_gme_with_rgb_config(tmp_path, image_path):
    """Test --no-gme works with a 3-channel config file."""
    config = tmp_path / "rgb.json"
    config.write_text(json.dumps({"name": "rgb", "input_channels": 3, "input_h": 64, "input_w": 64,
                                  "pool_divisor": 32, "num_classes": 4, "trans_bdc": {"num_blocks": 1}}))
    out = tmp_path / "m.ppm"
    assert main(["infer", "--config", str(config), "--image", str(image_path), "--out", str(out), "--no-gme"]) == 0
    assert out.exists()


def test_infer_requires_out(image_path, capsys):
    """Test infer without --out is a usage error."""
    assert main(["infer", "--config", "micro", "--image", str(image_path)]) == 2


def test_infer_bad_image(tmp_path, capsys):
    """Test an undecodable image exits with status 1."""
    path = tmp_path / "x.ppm"
    path.write_bytes(b"P6\n4 4\n255\n")
    assert main(["infer", "--config", "micro", "--image", str(path), "--out", str(tmp_path / "m.ppm")]) == 1
    assert "truncated" in capsys.readouterr().err


def test_gradcheck_command(tmp_path):
    """Test the gradcheck subcommand writes a passing report."""
    out = tmp_path / "grad.json"
    argv = ["gradcheck", "--filter", "heads.seg.conv2.*", "--max-coords", "2", "--out", str(out)]
    assert main(argv) == 0
    report = GradCheckReport.model_validate_json(out.read_text())
    assert report.passed
    assert report.checked == 4


def test_verify_suite(tmp_path, capsys):
    """Test verify prints one line per check and writes the suite report."""
    out = tmp_path / "suite.json"
    assert main(["verify", "--suite", "gme", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert all(line.startswith("ok") for line in lines)
    assert SuiteReport.model_validate_json(out.read_text()).suite == "gme"


def test_verify_oracle(capsys):
    """Test the oracle sweep from the command line."""
    assert main(["verify", "--suite", "oracle", "--trials", "2"]) == 0
    assert "conv2d" in capsys.readouterr().out


def test_verify_unknown_suite(capsys):
    """Test an unknown suite exits with status 2."""
    assert main(["verify", "--suite", "everything"]) == 2


def test_ablate_text_and_csv(tmp_path, capsys):
    """Test the ablation table in text and CSV."""
    assert main(["ablate"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 12
    assert lines[-1].split()[-2] == "1.76M"

    out = tmp_path / "ablate.csv"
    assert main(["ablate", "--format", "csv", "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "vit,dw3,dw1,dwsep,c-attn,gme,params,gflops"
    assert len(rows) == 12


def test_ablate_json(tmp_path):
    """Test JSON ablation output is a list of entries."""
    out = tmp_path / "ablate.json"
    assert main(["ablate", "--format", "json", "--out", str(out)]) == 0
    entries = json.loads(out.read_text())
    assert len(entries) == 11
    assert entries[-1]["params"] == 1_761_478


def test_invalid_option_value_is_usage_error(capsys):
    """Test an option the request schema rejects exits with status 2 and names the field."""
    assert main(["gradcheck", "--tolerance", "0"]) == 2
    assert "tolerance" in capsys.readouterr().err
    assert main(["gradcheck", "--max-coords", "-1"]) == 2
