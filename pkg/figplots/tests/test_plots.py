import hashlib
import io
from pathlib import Path

import numpy as np
import pytest

from figplots import PlotError, PlotSpec, plot


def write_log_csv(path, N=3, rows=120, ts=0.03, esc=False, seed=0):
    """Synthetic CSV in the simulator's log schema (built by hand)."""
    rng = np.random.default_rng(seed)
    t = np.arange(rows) * ts
    cols = {"t": t}
    for i in range(1, N + 1):
        cols[f"phi_{i}"] = 0.3 * np.sin(5 * t + 0.4 * i)
    for i in range(1, N + 1):
        cols[f"omega_{i}"] = 1.5 * np.cos(5 * t + 0.4 * i)
    cols["phi_m1"] = 0.2 * np.sin(5 * t)
    cols["phi_m2"] = np.zeros(rows)
    for i in range(1, N + 1):
        cols[f"meas_{i}"] = cols[f"phi_{i}"] + 1e-3 * rng.standard_normal(rows)
    if esc:
        cols["esc_I"] = 0.1 + 0.01 * np.sin(t)
        cols["esc_y"] = 0.01 * np.sin(3 * t)
        cols["esc_xi"] = 0.005 * np.sin(3 * t + 1)
        cols["esc_lambda"] = 1.0 + 0.05 * np.tanh(t - 1)
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for j in range(rows):
        buf.write(",".join(f"{cols[name][j]:.12g}" for name in cols) + "\n")
    Path(path).write_text(buf.getvalue())
    return path


@pytest.fixture
def log_csv(tmp_path):
    return write_log_csv(tmp_path / "run.csv")


@pytest.fixture
def esc_csv(tmp_path):
    return write_log_csv(tmp_path / "esc.csv", esc=True)


class TestKinds:
    def test_identification_overlay_single(self, tmp_path, log_csv):
        out = tmp_path / "overlay.png"
        plot(PlotSpec("identification-overlay", [str(log_csv)], str(out)))
        assert out.exists() and out.stat().st_size > 1000

    def test_identification_overlay_pair(self, tmp_path, log_csv):
        other = write_log_csv(tmp_path / "run2.csv", seed=1)
        out = tmp_path / "overlay2.png"
        plot(PlotSpec("identification-overlay", [str(log_csv), str(other)], str(out)))
        assert out.exists()

    def test_staged_amplitude_with_stage_lines(self, tmp_path, log_csv):
        out = tmp_path / "staged.png"
        plot(PlotSpec("staged-amplitude", [str(log_csv)], str(out),
                      i_star=2, stages=[1.0, 2.0]))
        assert out.exists() and out.stat().st_size > 1000

    def test_sync_comparison(self, tmp_path, log_csv):
        other = write_log_csv(tmp_path / "run2.csv", seed=2)
        out = tmp_path / "sync.png"
        plot(PlotSpec("sync-comparison", [str(log_csv), str(other)], str(out)))
        assert out.exists()

    def test_esc_trace(self, tmp_path, esc_csv):
        out = tmp_path / "esc.png"
        plot(PlotSpec("esc-trace", [str(esc_csv)], str(out)))
        assert out.exists()


class TestErrors:
    def test_unknown_kind(self, log_csv):
        with pytest.raises(PlotError):
            PlotSpec("waterfall", [str(log_csv)], "x.png")

    def test_missing_column_named(self, tmp_path, log_csv):
        out = tmp_path / "x.png"
        with pytest.raises(PlotError, match="esc_I"):
            plot(PlotSpec("esc-trace", [str(log_csv)], str(out)))
        assert not out.exists()

    def test_header_only_csv(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("t,phi_1,omega_1,phi_m1,phi_m2,meas_1\n")
        out = tmp_path / "x.png"
        with pytest.raises(PlotError, match="header only"):
            plot(PlotSpec("staged-amplitude", [str(p)], str(out), i_star=1))
        assert not out.exists()

    def test_wrong_input_count(self, tmp_path, log_csv):
        with pytest.raises(PlotError):
            plot(PlotSpec("sync-comparison", [str(log_csv)], str(tmp_path / "x.png")))

    def test_target_pendulum_missing(self, tmp_path, log_csv):
        with pytest.raises(PlotError, match="phi_9"):
            plot(PlotSpec("staged-amplitude", [str(log_csv)],
                          str(tmp_path / "x.png"), i_star=9))


class TestHygiene:
    def test_deterministic_bytes(self, tmp_path, log_csv):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        spec = dict(kind="staged-amplitude", inputs=[str(log_csv)], i_star=2,
                    stages=[1.0])
        plot(PlotSpec(output=str(a), **spec))
        plot(PlotSpec(output=str(b), **spec))
        assert a.read_bytes() == b.read_bytes()

    def test_input_never_mutated(self, tmp_path, log_csv):
        before = hashlib.sha256(Path(log_csv).read_bytes()).hexdigest()
        plot(PlotSpec("identification-overlay", [str(log_csv)],
                      str(tmp_path / "o.png")))
        after = hashlib.sha256(Path(log_csv).read_bytes()).hexdigest()
        assert before == after


class TestCli:
    def test_end_to_end(self, tmp_path, log_csv, capsys):
        from figplots.cli import main
        out = tmp_path / "cli.png"
        code = main(["--kind", "staged-amplitude", "--in", str(log_csv),
                     "--out", str(out), "--i-star", "2", "--stages", "1,2"])
        assert code == 0
        assert out.exists()
        assert "wrote" in capsys.readouterr().out

    def test_error_exit_code(self, tmp_path, log_csv, capsys):
        from figplots.cli import main
        code = main(["--kind", "esc-trace", "--in", str(log_csv),
                     "--out", str(tmp_path / "x.png")])
        assert code == 2
        assert "esc_I" in capsys.readouterr().err
