import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sqglab import io
from sqglab.bundle import BundleError, cmd_run, cmd_verify, spec_from_text
from sqglab.cli import main
from sqglab.extension import ExtensionConfig, extend
from sqglab.solver import SimConfig
from sqglab.spectral import Grid, PhysicalField, forward_transform, random_field

SMALL = """\
grid=32
kappa=0.1
alpha=0.5
dt=0.005
t_end=0.2
snapshot_stride=10
seed=7
checks={checks}
"""
QUICK = "energy_balance,l2_monotone,max_principle,mean_conservation,cordoba"


class TestSnapshots:
    @given(hnp.arrays(np.float64, (8, 8), elements=st.floats(allow_nan=True, allow_infinity=True)),
           st.floats(0, 1e6), st.floats(0.01, 1.0), st.floats(0, 10))
    def test_roundtrip_bitwise(self, tmp_path_factory, values, t, alpha, kappa):
        path = tmp_path_factory.mktemp("snap") / "a.sqg"
        io.snapshot_write(path, PhysicalField(Grid(8, 3.0), values), t, alpha, kappa)
        s = io.snapshot_read(path)
        assert s.field.values.tobytes() == np.ascontiguousarray(values).tobytes()
        assert (s.time, s.alpha, s.kappa, s.grid.length) == (t, alpha, kappa, 3.0)

    def test_spectral_input(self, tmp_path):
        th = random_field(Grid(16), seed=1)
        io.snapshot_write(tmp_path / "s.sqg", forward_transform(th), 0.0, 0.5, 0.1)
        assert np.allclose(io.snapshot_read(tmp_path / "s.sqg").field.values, th.values, atol=1e-14)

    def test_truncated(self, tmp_path):
        p = tmp_path / "s.sqg"
        io.snapshot_write(p, random_field(Grid(8)), 0.0, 0.5, 0.1)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(io.FormatError, match="payload"):
            io.snapshot_read(p)

    def test_header_mismatch(self, tmp_path):
        p = tmp_path / "s.sqg"
        io.snapshot_write(p, random_field(Grid(8)), 0.0, 0.5, 0.1)
        p.write_bytes(p.read_bytes().replace(b"N=8", b"N=9", 1))
        with pytest.raises(io.FormatError):
            io.snapshot_read(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "s.sqg"
        p.write_bytes(b"NOTSQG\n" + b"\0" * 64)
        with pytest.raises(io.FormatError, match="magic"):
            io.snapshot_read(p)

    def test_missing_token(self, tmp_path):
        p = tmp_path / "s.sqg"
        p.write_bytes(io.MAGIC + b"N=2 L=1 t=0\n" + b"\0" * 32)
        with pytest.raises(io.FormatError, match="alpha"):
            io.snapshot_read(p)


class TestExtensionDump:
    def test_roundtrip(self, tmp_path):
        g = Grid(16)
        cfg = ExtensionConfig(0.4, J=12)
        ext = extend(random_field(g, seed=2), cfg)
        io.extension_write(tmp_path / "e.sqx", ext, cfg, 1.5, 0.2)
        back, cfg2, t, kappa = io.extension_read(tmp_path / "e.sqx")
        assert (t, kappa, cfg2.J, cfg2.rho) == (1.5, 0.2, 12, cfg.rho)
        assert np.allclose(back.z, ext.z, rtol=1e-15)
        assert np.allclose(back.values, ext.values, atol=1e-13)

    def test_truncated(self, tmp_path):
        g = Grid(8)
        cfg = ExtensionConfig(0.4, J=3)
        io.extension_write(tmp_path / "e.sqx", extend(random_field(g), cfg), cfg, 0.0, 0.1)
        data = (tmp_path / "e.sqx").read_bytes()
        (tmp_path / "e.sqx").write_bytes(data[:-1])
        with pytest.raises(io.FormatError):
            io.extension_read(tmp_path / "e.sqx")


class TestConfig:
    def test_roundtrip(self):
        cfg = SimConfig(Grid(32, 5.0), 0.1, 0.3, 1e-3, 0.5, dealias=False, velocity_law="none",
                        snapshot_stride=3)
        back = io.sim_config_from_dict(io.parse_key_values(io.sim_config_to_text(cfg)))
        assert back == cfg

    @pytest.mark.parametrize("text,match", [
        ("grid=32\nkappa=1\n", "missing"),
        ("grid=32\ngrid=16\n", "duplicate"),
        ("just words\n", "key=value"),
        ("grid=32,1,2\nkappa=1\nalpha=.5\ndt=1\nt_end=1\n", "grid"),
        ("grid=32\nkappa=1\nalpha=.5\ndt=1\nt_end=1\nvelocity_law=custom\n", "custom"),
        ("grid=32\nkappa=1\nalpha=.5\ndt=1\nt_end=1\ncolour=red\n", "unknown"),
        ("grid=32\nkappa=1\nalpha=.5\ndt=1\nt_end=1\ndealias=maybe\n", "dealias"),
        ("grid=32\nkappa=-1\nalpha=.5\ndt=1\nt_end=1\n", "kappa"),
    ])
    def test_errors(self, text, match):
        with pytest.raises(io.FormatError, match=match):
            io.sim_config_from_dict(io.parse_key_values(text))

    def test_comments(self):
        assert io.parse_key_values("# top\na = 1  # trailing\n\n") == {"a": "1"}

    def test_spec_errors(self):
        with pytest.raises(io.FormatError):
            spec_from_text(SMALL.format(checks="nonsense"))
        with pytest.raises(io.FormatError):
            spec_from_text(SMALL.format(checks="all") + "extension.alpha=0.3\n")
        with pytest.raises(io.FormatError):
            spec_from_text(SMALL.format(checks="all") + "check.cordoba\n=1")


class TestJson:
    @given(st.lists(st.floats(allow_nan=False), max_size=20))
    def test_float_roundtrip(self, xs):
        back = json.loads(io.dumps({"v": xs}))["v"]
        assert [float(b) for b in back] == xs
        assert all(isinstance(b, float) for b in back)

    def test_nonfinite(self):
        back = json.loads(io.dumps([math.nan, math.inf, -math.inf]))
        assert math.isnan(back[0]) and back[1:] == [math.inf, -math.inf]

    def test_numpy_scalars(self):
        assert json.loads(io.dumps({"a": np.float32(0.5), "b": np.int64(3), "c": np.bool_(True)})) == \
            {"a": 0.5, "b": 3, "c": True}


@pytest.fixture(scope="module")
def bundle_pair(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundles")
    text = SMALL.format(checks=QUICK)
    a = cmd_run(spec_from_text(text), root / "a", text)
    b = cmd_run(spec_from_text(text), root / "b", text)
    return a, b


class TestBundle:
    def test_deterministic(self, bundle_pair):
        a, b = bundle_pair
        assert a.files == b.files
        assert a.manifest["digest"] == b.manifest["digest"]

    def test_layout(self, bundle_pair):
        a, _ = bundle_pair
        assert a.complete
        assert "config.txt" in a.files and "csv/norms.csv" in a.files
        assert any(f.startswith("snapshots/") for f in a.files)
        for name in QUICK.split(","):
            recs = a.records(name)
            assert recs and all(r["pass"] for r in recs)
            assert {"check", "quantity", "value", "params", "grid", "seed"} <= set(recs[0])

    def test_verify_ok(self, bundle_pair):
        res = cmd_verify(bundle_pair[0].path)
        assert res.ok and res.exit_code == 0

    def test_corruption_detected(self, tmp_path):
        text = SMALL.format(checks="mean_conservation")
        bundle = cmd_run(spec_from_text(text), tmp_path / "c", text)
        snap = next(p for p in (tmp_path / "c" / "snapshots").iterdir())
        data = bytearray(snap.read_bytes())
        data[-1] ^= 0xFF
        snap.write_bytes(bytes(data))
        res = cmd_verify(bundle.path)
        assert not res.ok and res.exit_code == 1
        assert any("hash mismatch" in line for line in res.lines)

    def test_tampered_record(self, tmp_path):
        text = SMALL.format(checks="mean_conservation")
        bundle = cmd_run(spec_from_text(text), tmp_path / "d", text)
        p = tmp_path / "d" / "checks" / "mean_conservation.jsonl"
        rec = json.loads(p.read_text())
        rec["value"] = 1.0
        p.write_text(io.dumps(rec) + "\n")
        res = cmd_verify(bundle.path)
        assert not res.ok
        assert any(line.startswith("FAIL mean_conservation") for line in res.lines)

    def test_unlisted_file(self, tmp_path):
        text = SMALL.format(checks="none")
        cmd_run(spec_from_text(text), tmp_path / "e", text)
        (tmp_path / "e" / "stray.txt").write_text("x")
        assert any("unlisted" in line for line in cmd_verify(tmp_path / "e").lines)

    def test_empty_dir(self, tmp_path):
        with pytest.raises(BundleError, match="no bundle"):
            cmd_verify(tmp_path)

    def test_no_checks(self, tmp_path):
        text = SMALL.format(checks="none")
        bundle = cmd_run(spec_from_text(text), tmp_path / "f", text)
        assert bundle.complete and bundle.manifest["checks"] == []
        assert not (tmp_path / "f" / "checks").exists()
        assert cmd_verify(bundle.path).ok

    def test_blowup_marks_incomplete(self, tmp_path):
        text = SMALL.format(checks="none").replace("kappa=0.1", "kappa=1e-6") \
            .replace("t_end=0.2", "t_end=0.02") + "blowup_factor=1.0000001\ninit.amplitude=50\n"
        bundle = cmd_run(spec_from_text(text), tmp_path / "g", text)
        assert not bundle.complete
        assert not cmd_verify(bundle.path).ok


class TestCli:
    def test_run_verify(self, tmp_path, capsys):
        cfg = tmp_path / "x.cfg"
        cfg.write_text(SMALL.format(checks="energy_balance,mean_conservation"))
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        assert main(["verify", str(tmp_path / "b"), "--quiet"]) == 0
        assert capsys.readouterr().out.strip().endswith("OK")

    def test_verify_missing(self, tmp_path, capsys):
        assert main(["verify", str(tmp_path)]) == 2
        assert "no bundle" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "x.cfg"
        cfg.write_text("grid=32\n")
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 2

    def test_diagnose(self, tmp_path, capsys):
        p = tmp_path / "s.sqg"
        io.snapshot_write(p, random_field(Grid(32), seed=1), 0.0, 0.5, 0.1)
        assert main(["diagnose", "--snapshot", str(p), "--check", "cordoba"]) == 0
        recs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert recs and all(r["check"] == "cordoba" for r in recs)

    def test_diagnose_bad_snapshot(self, tmp_path):
        p = tmp_path / "s.sqg"
        p.write_bytes(b"garbage")
        assert main(["diagnose", "--snapshot", str(p), "--check", "cordoba"]) == 2

    def test_console_script_module(self):
        out = subprocess.run([sys.executable, "-m", "sqglab", "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "verify" in out.stdout
