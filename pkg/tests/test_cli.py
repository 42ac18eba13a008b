"""PNG round trips, config handling, exit codes, and end-to-end determinism."""

import numpy as np
import pytest

from msbd import png_io
from msbd.cli import main
from msbd.errors import ConfigError
from msbd.cli import load_config_file


# --- png io ------------------------------------------------------------------

def _grid(depth, shape):
    # values exactly on the quantization grid survive a write/read cycle
    rng = np.random.default_rng(0)
    scale = 255 if depth == 8 else 65535
    return rng.integers(0, scale + 1, size=shape).astype(np.float32) / scale


@pytest.mark.parametrize("depth", [8, 16])
@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3), (5, 7, 4)])
def test_png_round_trip(tmp_path, depth, shape):
    x = _grid(depth, shape)
    path = str(tmp_path / "img.png")
    png_io.write_image(path, x, depth=depth)
    back, got_depth = png_io.read_image(path)
    assert got_depth == depth
    assert back.shape == x.shape
    np.testing.assert_array_equal(back, x.astype(np.float32))


def test_write_clips_out_of_range(tmp_path):
    path = str(tmp_path / "c.png")
    png_io.write_image(path, np.array([[-0.5, 2.0]]))
    back, _ = png_io.read_image(path)
    np.testing.assert_array_equal(back, [[0.0, 1.0]])


def test_read_missing_file():
    with pytest.raises(OSError):
        png_io.read_image("/nonexistent/nope.png")


def test_mask_accepts_gray_written_as_rgb(tmp_path):
    path = str(tmp_path / "m.png")
    m = _grid(8, (4, 4))
    png_io.write_image(path, np.repeat(m[:, :, None], 3, axis=2))
    np.testing.assert_array_equal(png_io.read_mask(path), m)


def test_mask_rejects_colored_image(tmp_path):
    path = str(tmp_path / "m.png")
    rgb = _grid(8, (4, 4, 3))
    rgb[0, 0] = [1.0, 0.0, 0.0]
    png_io.write_image(path, rgb)
    with pytest.raises(OSError, match="grayscale"):
        png_io.read_mask(path)


# --- config file -------------------------------------------------------------

def test_config_file_parsing(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "batch_b: 2\nsampler_steps: 4\nt_train: 40\n"
        "stages:\n  - {long_edge: 16, t_prime_fraction: 0.5}\n"
        "  - {long_edge: 0, t_prime_fraction: 0.25, segmented: true, tile_size: 16, overlap: 8}\n")
    kwargs = load_config_file(str(path))
    assert kwargs["batch_b"] == 2
    assert kwargs["stages"][1].segmented


def test_config_file_unknown_key(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("batch_size: 5\n")
    with pytest.raises(ConfigError, match="batch_size"):
        load_config_file(str(path))


def test_config_file_unknown_stage_key(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("stages:\n  - {long_edge: 16, frac: 0.5}\n")
    with pytest.raises(ConfigError, match="frac"):
        load_config_file(str(path))


# --- cli ---------------------------------------------------------------------

def _write_inputs(tmp_path, n=24):
    rng = np.random.default_rng(1)
    img = str(tmp_path / "in.png")
    mask = str(tmp_path / "mask.png")
    png_io.write_image(img, rng.random((n, n, 3)))
    m = np.zeros((n, n))
    m[8:16, 8:16] = 1.0
    png_io.write_image(mask, m)
    return img, mask


def _write_cfg(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "batch_b: 2\nrepaint_r: 1\nsampler_steps: 4\nt_train: 40\nmargin: 64\n"
        "pixel_space_mode: true\n"
        "stages:\n  - {long_edge: 16, t_prime_fraction: 0.5}\n"
        "  - {long_edge: 0, t_prime_fraction: 0.25, segmented: true, tile_size: 16, overlap: 8}\n")
    return str(path)


def _run(tmp_path, *extra, out_name="out.png"):
    img, mask = _write_inputs(tmp_path)
    out = str(tmp_path / out_name)
    code = main(["--image", img, "--mask", mask, "--prompt", "p", "--out", out,
                 "--config", _write_cfg(tmp_path), "--native-resolution", "8",
                 "--seed", "7", *extra])
    return code, out


def test_cli_end_to_end(tmp_path):
    code, out = _run(tmp_path)
    assert code == 0
    result, depth = png_io.read_image(out)
    assert depth == 8
    assert result.shape == (24, 24, 3)


def test_cli_byte_identical_reruns(tmp_path):
    code_a, out_a = _run(tmp_path, out_name="a.png")
    code_b, out_b = _run(tmp_path, out_name="b.png")
    assert code_a == code_b == 0
    with open(out_a, "rb") as fa, open(out_b, "rb") as fb:
        assert fa.read() == fb.read()


def test_cli_jobs_flag_does_not_change_bytes(tmp_path):
    _, out_a = _run(tmp_path, out_name="a.png")
    _, out_b = _run(tmp_path, "--jobs", "4", out_name="b.png")
    with open(out_a, "rb") as fa, open(out_b, "rb") as fb:
        assert fa.read() == fb.read()


def test_cli_preserves_16bit_depth(tmp_path):
    img = str(tmp_path / "in16.png")
    png_io.write_image(img, np.random.default_rng(2).random((24, 24)), depth=16)
    mask = str(tmp_path / "m.png")
    m = np.zeros((24, 24))
    m[8:16, 8:16] = 1.0
    png_io.write_image(mask, m)
    out = str(tmp_path / "out.png")
    code = main(["--image", img, "--mask", mask, "--out", out,
                 "--config", _write_cfg(tmp_path), "--native-resolution", "8"])
    assert code == 0
    _, depth = png_io.read_image(out)
    assert depth == 16


def test_cli_dump_intermediates(tmp_path):
    dump = tmp_path / "steps"
    code, _ = _run(tmp_path, "--dump-intermediates", str(dump))
    assert code == 0
    names = sorted(p.name for p in dump.iterdir())
    assert any("stage1_cand" in n for n in names)
    assert any(n.endswith("output.png") for n in names)


def test_cli_missing_image_exit_1(tmp_path):
    _, mask = _write_inputs(tmp_path)
    code = main(["--image", str(tmp_path / "absent.png"), "--mask", mask,
                 "--out", str(tmp_path / "o.png")])
    assert code == 1


def test_cli_missing_required_flags_exit_1():
    assert main(["--prompt", "p"]) == 1


def test_cli_empty_mask_exit_1(tmp_path):
    img, _ = _write_inputs(tmp_path)
    mask = str(tmp_path / "zero.png")
    png_io.write_image(mask, np.zeros((24, 24)))
    code = main(["--image", img, "--mask", mask, "--out", str(tmp_path / "o.png"),
                 "--config", _write_cfg(tmp_path), "--native-resolution", "8"])
    assert code == 1


def test_cli_bad_config_exit_3(tmp_path):
    img, mask = _write_inputs(tmp_path)
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    code = main(["--image", img, "--mask", mask, "--out", str(tmp_path / "o.png"),
                 "--config", str(bad)])
    assert code == 3


def test_cli_dead_remote_exit_2(tmp_path):
    img, mask = _write_inputs(tmp_path)
    code = main(["--image", img, "--mask", mask, "--out", str(tmp_path / "o.png"),
                 "--backend", "remote", "--backend-url", "http://127.0.0.1:9",
                 "--config", _write_cfg(tmp_path)])
    assert code == 2


def test_cli_remote_without_url_exit_3(tmp_path, monkeypatch):
    monkeypatch.delenv("MSBD_BACKEND_URL", raising=False)
    img, mask = _write_inputs(tmp_path)
    code = main(["--image", img, "--mask", mask, "--out", str(tmp_path / "o.png"),
                 "--backend", "remote"])
    assert code == 3


def test_cli_flag_overrides_config_file(tmp_path):
    img, mask = _write_inputs(tmp_path)
    cfg = tmp_path / "cfg.yaml"
    # the file's step count is invalid; the flag must win before validation
    cfg.write_text("sampler_steps: 0\nt_train: 40\nmargin: 64\npixel_space_mode: true\n"
                   "batch_b: 1\nrepaint_r: 0\n"
                   "stages:\n  - {long_edge: 0, t_prime_fraction: 0.5}\n")
    out = str(tmp_path / "o.png")
    assert main(["--image", img, "--mask", mask, "--out", out, "--config", str(cfg),
                 "--native-resolution", "8"]) == 3
    assert main(["--image", img, "--mask", mask, "--out", out, "--config", str(cfg),
                 "--steps", "4", "--native-resolution", "8"]) == 0


def test_cli_ablation_mode_requires_variant(tmp_path):
    img, mask = _write_inputs(tmp_path)
    code = main(["--image", img, "--mask", mask, "--out", str(tmp_path / "o.png"),
                 "--mode", "ablation", "--config", _write_cfg(tmp_path)])
    assert code == 1


def test_cli_upscale_only_shorthand(tmp_path):
    code, out = _run(tmp_path, "--mode", "ablation", "--upscale-only", "bilinear")
    assert code == 0


def test_demo_mixture_prints_mode_stats(capsys):
    assert main(["--demo", "mixture"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("mode -1.0") and lines[1].startswith("mode +1.0")
    for line in lines:
        mass = float(line.split("mass ")[1].split()[0])
        assert 0.4 < mass < 0.6
