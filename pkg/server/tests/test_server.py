"""End-to-end checks of the reference backend over real HTTP.

Each test starts a server on a free port and talks to it with `requests`,
so the wire format, validation, and error mapping are all exercised exactly
as a remote client would see them. The golden-vector test is the
cross-implementation gate: inputs and expected outputs were produced by an
independent oracle implementation and shipped as files.
"""

import base64
import json
import math
import os
import subprocess
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import requests

from reference_backend_server import (BackendApp, ConfigError, ServerConfig,
                                      load_config_file, make_server,
                                      resolve_config)
from reference_backend_server.__main__ import entrypoint
from reference_backend_server.models import score_tensor, upscale_tensor
from reference_backend_server.verify import case_arrays, load_golden

HEADERS = {"x-msbd-proto": "1"}
GOLDEN_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "golden")
SRC_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir, "src"))


@pytest.fixture()
def serve_app():
    running = []

    def start(**cfg_kwargs):
        cfg = ServerConfig(port=0, **cfg_kwargs)
        httpd = make_server(BackendApp(cfg))
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        running.append((httpd, thread))
        host, port = httpd.server_address[:2]
        return f"http://{host}:{port}"

    yield start
    for httpd, thread in running:
        httpd.shutdown()
        httpd.server_close()
        thread.join(timeout=5)


def encode(arr):
    raw = np.ascontiguousarray(arr, dtype="<f4")
    return {"tensor": base64.b64encode(raw.tobytes()).decode("ascii"),
            "shape": list(raw.shape), "dtype": "f32"}


def decode(body):
    raw = base64.b64decode(body["tensor"])
    return np.frombuffer(raw, dtype="<f4").reshape(body["shape"])


def post(url, path, body, headers=HEADERS):
    return requests.post(url + path, json=body, headers=headers, timeout=30)


def denoise_body(x, t=10, alpha_bar=0.5, prompt="", guidance=0.0):
    return encode(x) | {"t": t, "alpha_bar": alpha_bar,
                        "prompt": prompt, "guidance": guidance}


# ---------------------------------------------------------------- health


def test_health_defaults(serve_app):
    url = serve_app(mode="oracle")
    resp = requests.get(url + "/v1/health", headers=HEADERS, timeout=30)
    assert resp.status_code == 200
    assert resp.headers["x-msbd-proto"] == "1"
    assert resp.json() == {"status": "ok", "native_resolution": 64}


def test_health_native_resolution_override(serve_app):
    url = serve_app(mode="stub", native_resolution=16)
    resp = requests.get(url + "/v1/health", headers=HEADERS, timeout=30)
    assert resp.json()["native_resolution"] == 16


# ---------------------------------------------------------------- denoise


def test_stub_denoise_returns_zeros(serve_app):
    url = serve_app(mode="stub")
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5, 7)).astype(np.float32)
    resp = post(url, "/v1/denoise", denoise_body(x))
    assert resp.status_code == 200
    out = decode(resp.json())
    assert out.shape == (2, 5, 7)
    assert not out.any()


def test_wire_roundtrip_is_bitwise(serve_app):
    # an echoing hook sends the request tensor straight back
    url = serve_app(mode="hook", hook="hook_example:ECHO")
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 4, 5)).astype(np.float32)
    x[0, 0, 0] = -0.0
    x[0, 0, 1] = np.float32(1e-39)  # subnormal survives too
    resp = post(url, "/v1/denoise", denoise_body(x))
    assert resp.status_code == 200
    out = decode(resp.json())
    assert (out.view(np.uint32) == x.view(np.uint32)).all()


def test_golden_vectors_over_http(serve_app):
    manifest, data = load_golden(GOLDEN_DIR)
    mixture = tuple(tuple(c) for c in manifest["mixture"]["components"])
    url = serve_app(mode="oracle", mixture=mixture)
    tolerance = float(manifest["tolerance"])
    for case in manifest["cases"]:
        x, want = case_arrays(data, case)
        resp = post(url, "/v1/denoise",
                    denoise_body(x, t=case["t"], alpha_bar=case["alpha_bar"]))
        assert resp.status_code == 200, case["name"]
        got = decode(resp.json())
        err = float(np.abs(got - want).max())
        assert err <= tolerance, f"{case['name']}: max err {err}"


def test_denoise_parameter_validation(serve_app):
    url = serve_app(mode="oracle")
    x = np.ones((1, 2, 2), dtype=np.float32)
    good = denoise_body(x)
    for key in ("t", "alpha_bar", "prompt", "guidance"):
        body = {k: v for k, v in good.items() if k != key}
        resp = post(url, "/v1/denoise", body)
        assert resp.status_code == 400
        assert key in resp.json()["error"]
    for bad in (dict(good, t=1.5), dict(good, t=True), dict(good, prompt=3),
                dict(good, guidance="high"), dict(good, alpha_bar=0.0),
                dict(good, alpha_bar=1.0), dict(good, alpha_bar=1.5)):
        assert post(url, "/v1/denoise", bad).status_code == 400


def test_tensor_payload_validation(serve_app):
    url = serve_app(mode="stub")
    x = np.ones((1, 2, 2), dtype=np.float32)
    good = denoise_body(x)
    cases = [
        ({k: v for k, v in good.items() if k != "tensor"}, "tensor"),
        (dict(good, dtype="f64"), "dtype"),
        (dict(good, shape=[2, 2]), "shape"),
        (dict(good, shape=[1, 2, 0]), "shape"),
        (dict(good, shape=[True, 2, 2]), "shape"),
        (dict(good, shape=[1, 2, 3]), "bytes"),  # length no longer matches
        (dict(good, tensor="!!!not-base64!!!"), "tensor data"),
        (dict(good, tensor=17), "base64 string"),
    ]
    for body, fragment in cases:
        resp = post(url, "/v1/denoise", body)
        assert resp.status_code == 400
        assert fragment in resp.json()["error"]
    inf = np.array([[[np.inf, 0.0]]], dtype=np.float32)
    raw = base64.b64encode(inf.astype("<f4").tobytes()).decode("ascii")
    resp = post(url, "/v1/denoise", dict(good, tensor=raw, shape=[1, 1, 2]))
    assert resp.status_code == 400
    assert "non-finite" in resp.json()["error"]


# ---------------------------------------------------------------- protocol


def test_missing_version_header_rejected(serve_app):
    url = serve_app(mode="stub")
    resp = requests.get(url + "/v1/health", timeout=30)
    assert resp.status_code == 400
    assert "protocol version" in resp.json()["error"]
    # error responses still carry the server's version header
    assert resp.headers["x-msbd-proto"] == "1"
    x = np.ones((1, 1, 1), dtype=np.float32)
    resp = post(url, "/v1/denoise", denoise_body(x), headers={})
    assert resp.status_code == 400


def test_wrong_version_header_rejected(serve_app):
    url = serve_app(mode="stub")
    resp = requests.get(url + "/v1/health", headers={"x-msbd-proto": "2"}, timeout=30)
    assert resp.status_code == 400
    assert "'2'" in resp.json()["error"]


def test_unknown_path_is_404(serve_app):
    url = serve_app(mode="stub")
    assert requests.get(url + "/v1/nope", headers=HEADERS, timeout=30).status_code == 404
    assert post(url, "/v1/nope", {}).status_code == 404


def test_malformed_body_rejected(serve_app):
    url = serve_app(mode="stub")
    resp = requests.post(url + "/v1/denoise", data=b"{oops", headers=HEADERS, timeout=30)
    assert resp.status_code == 400
    assert "JSON" in resp.json()["error"]
    resp = requests.post(url + "/v1/denoise", data=b"[1, 2]", headers=HEADERS, timeout=30)
    assert resp.status_code == 400
    assert "object" in resp.json()["error"]


# ---------------------------------------------------------------- upscale / score


def test_upscale_matches_local_math(serve_app):
    url = serve_app(mode="oracle")
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 5, 6)).astype(np.float32)
    resp = post(url, "/v1/upscale", encode(x) | {"target_w": 17, "target_h": 11})
    assert resp.status_code == 200
    out = decode(resp.json())
    assert out.shape == (2, 11, 17)
    want = upscale_tensor(x, 17, 11).astype(np.float32)
    assert (out.view(np.uint32) == want.view(np.uint32)).all()


def test_upscale_rejects_shrinking(serve_app):
    url = serve_app(mode="stub")
    x = np.ones((1, 8, 8), dtype=np.float32)
    resp = post(url, "/v1/upscale", encode(x) | {"target_w": 4, "target_h": 16})
    assert resp.status_code == 400
    assert "below source" in resp.json()["error"]
    resp = post(url, "/v1/upscale", encode(x) | {"target_w": 16})
    assert resp.status_code == 400
    assert "target_h" in resp.json()["error"]


def test_score_is_negative_l2(serve_app):
    url = serve_app(mode="oracle")
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 6, 6)).astype(np.float32)
    resp = post(url, "/v1/score", encode(x) | {"prompt": "anything"})
    assert resp.status_code == 200
    got = resp.json()["score"]
    assert math.isclose(got, score_tensor(x, "anything"), rel_tol=0, abs_tol=0)
    bad = post(url, "/v1/score", encode(x))
    assert bad.status_code == 400
    assert "prompt" in bad.json()["error"]


# ---------------------------------------------------------------- hook mode


def test_hook_object_serves_all_endpoints(serve_app):
    url = serve_app(mode="hook", hook="hook_example:MODEL")
    health = requests.get(url + "/v1/health", headers=HEADERS, timeout=30).json()
    assert health["native_resolution"] == 32
    x = np.full((1, 4, 4), 2.0, dtype=np.float32)
    out = decode(post(url, "/v1/denoise", denoise_body(x)).json())
    assert np.array_equal(out, np.full((1, 4, 4), 1.0, dtype=np.float32))
    up = decode(post(url, "/v1/upscale", encode(x) | {"target_w": 8, "target_h": 8}).json())
    assert up.shape == (1, 8, 8)
    score = post(url, "/v1/score", encode(x) | {"prompt": ""}).json()["score"]
    assert score == 42.0


def test_hook_factory_is_called(serve_app):
    url = serve_app(mode="hook", hook="hook_example:make_model")
    x = np.full((1, 2, 2), 4.0, dtype=np.float32)
    out = decode(post(url, "/v1/denoise", denoise_body(x)).json())
    assert np.array_equal(out, np.full((1, 2, 2), 2.0, dtype=np.float32))


def test_hook_missing_method_is_500(serve_app):
    url = serve_app(mode="hook", hook="hook_example:DENOISE_ONLY")
    x = np.ones((1, 2, 2), dtype=np.float32)
    assert post(url, "/v1/denoise", denoise_body(x)).status_code == 200
    resp = post(url, "/v1/upscale", encode(x) | {"target_w": 4, "target_h": 4})
    assert resp.status_code == 500
    assert "does not implement" in resp.json()["error"]


def test_hook_failure_is_500(serve_app):
    url = serve_app(mode="hook", hook="hook_example:BROKEN")
    x = np.ones((1, 2, 2), dtype=np.float32)
    resp = post(url, "/v1/denoise", denoise_body(x))
    assert resp.status_code == 500
    assert "weights not loaded" in resp.json()["error"]


def test_hook_bad_import_path():
    with pytest.raises(ConfigError, match="module.path:attribute"):
        BackendApp(ServerConfig(mode="hook", hook="hook_example"))
    with pytest.raises(ConfigError, match="cannot import"):
        BackendApp(ServerConfig(mode="hook", hook="no_such_module_xyz:thing"))
    with pytest.raises(ConfigError, match="no attribute"):
        BackendApp(ServerConfig(mode="hook", hook="hook_example:NOPE"))


# ---------------------------------------------------------------- config


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "server.json"
    path.write_text(json.dumps({
        "mode": "stub", "port": 0, "native_resolution": 8,
        "mixture": [[0.25, -2.0, 0.1], [0.75, 2.0, 0.2]],
    }))
    values = load_config_file(str(path))
    cfg = resolve_config(values, {"mode": None, "native_resolution": 12})
    assert cfg.mode == "stub"
    assert cfg.native_resolution == 12  # flag beats file
    assert cfg.mixture == ((0.25, -2.0, 0.1), (0.75, 2.0, 0.2))


def test_config_accepts_manifest_style_mixture(tmp_path):
    path = tmp_path / "server.json"
    path.write_text(json.dumps({"mixture": {"components": [[1.0, 0.0, 0.5]]}}))
    cfg = resolve_config(load_config_file(str(path)), {})
    assert cfg.mixture == ((1.0, 0.0, 0.5),)


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "server.json"
    path.write_text(json.dumps({"mode": "stub", "portt": 1}))
    with pytest.raises(ConfigError, match="portt"):
        load_config_file(str(path))


def test_config_validation():
    with pytest.raises(ConfigError, match="mode"):
        ServerConfig(mode="wat")
    with pytest.raises(ConfigError, match="port"):
        ServerConfig(port=70000)
    with pytest.raises(ConfigError, match="native_resolution"):
        ServerConfig(native_resolution=0)
    with pytest.raises(ConfigError, match="hook"):
        ServerConfig(mode="hook")
    with pytest.raises(ConfigError, match="sum"):
        ServerConfig(mixture=((0.5, 0.0, 0.1),))


# ---------------------------------------------------------------- misc


def test_concurrent_requests(serve_app):
    url = serve_app(mode="oracle")
    rng = np.random.default_rng(4)
    tensors = [rng.standard_normal((1, 6, 6)).astype(np.float32) for _ in range(24)]

    def one(x):
        resp = post(url, "/v1/denoise", denoise_body(x, t=5, alpha_bar=0.3))
        assert resp.status_code == 200
        return decode(resp.json())

    with ThreadPoolExecutor(max_workers=8) as pool:
        outs = list(pool.map(one, tensors))
    for x, out in zip(tensors, outs):
        assert out.shape == x.shape
        assert np.isfinite(out).all()


def test_verify_golden_cli_passes():
    proc = subprocess.run(
        [sys.executable, "-m", "reference_backend_server", "--verify-golden", GOLDEN_DIR],
        env=dict(os.environ, PYTHONPATH=SRC_DIR), capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.count("ok") >= 6


def test_verify_golden_cli_catches_tampering(tmp_path):
    manifest, data = load_golden(GOLDEN_DIR)
    data = data.copy()
    data[manifest["cases"][0]["expected_offset"]] += 1.0
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    data.astype("<f4").tofile(tmp_path / "vectors.bin")
    proc = subprocess.run(
        [sys.executable, "-m", "reference_backend_server", "--verify-golden", str(tmp_path)],
        env=dict(os.environ, PYTHONPATH=SRC_DIR), capture_output=True, text=True)
    assert proc.returncode == 1
    assert "FAIL" in proc.stdout


def test_cli_config_error_exit_code(capsys):
    assert entrypoint(["--mode", "hook"]) == 2
    assert "hook" in capsys.readouterr().err
