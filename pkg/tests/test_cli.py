import os

import pytest

from ponlut.cli import (CSV_COLUMNS, EXIT_BASELINE, EXIT_CONFIG, EXIT_IO, EXIT_LUT_MISSING, EXIT_OK,
                        EXIT_USAGE, main, parse_config)

SMALL = """\
[grid]
formats = NRZ
rops_dbm = -27
modes = NoLut, FullLut
preambles = 0, 200
seeds = 1, 2
payload_len = 10000
[lut]
train_len = 8000
[min_preamble]
rop_dbm = -28.5
payload_len = 20000
baseline_len = 4000
resolution = 500
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(SMALL)
    return str(path)


@pytest.fixture
def lut(tmp_path, config):
    path = tmp_path / "exp.lut"
    assert main(["build-lut", "--config", config, "--out", str(path)]) == EXIT_OK
    return str(path)


class TestBuildLut:
    def test_bytes_repeat(self, tmp_path, config, lut):
        again = tmp_path / "again.lut"
        main(["build-lut", "--config", config, "--out", str(again)])
        assert again.read_bytes() == open(lut, "rb").read()

    def test_zero_onus_gives_header_only(self, tmp_path):
        cfg = tmp_path / "none.ini"
        cfg.write_text("[onus]\n")
        out = tmp_path / "none.lut"
        assert main(["build-lut", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        assert out.read_text() == "PONLUT v1\n"

    def test_unwritable_path(self, tmp_path, config):
        out = tmp_path / "missing-dir" / "x.lut"
        assert main(["build-lut", "--config", config, "--out", str(out)]) == EXIT_IO

    def test_onus_section_with_auto_rop(self, tmp_path):
        cfg = tmp_path / "onus.ini"
        cfg.write_text("[onus]\nnear = NRZ, 5, auto\nfar = NRZ, 20, -26.5\n"
                       "[lut]\ntrain_len = 8000\nlaunch_dbm = -20\nfixed_loss_db = 0\n")
        out = tmp_path / "onus.lut"
        assert main(["build-lut", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        lines = out.read_text().splitlines()
        assert [ln.split()[1] for ln in lines if ln.startswith("phase")] == ["far", "near"]


class TestSweep:
    def run(self, tmp_path, config, lut, name="a.csv", *extra):
        out = tmp_path / name
        rc = main(["sweep", "--kind", "ber-vs-preamble", "--config", config, "--lut", lut,
                   "--out", str(out), *extra])
        assert rc == EXIT_OK
        return out.read_text()

    def test_schema(self, tmp_path, config, lut):
        text = self.run(tmp_path, config, lut)
        lines = text.splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        rows = [ln for ln in lines[1:] if not ln.startswith("#")]
        assert len(rows) == 2 * 2 * 2
        meta = [ln for ln in lines if ln.startswith("#")]
        assert any(ln.startswith("# config_sha256=") for ln in meta)
        assert all(ln.startswith("#") for ln in lines[1 + len(rows):])
        first = dict(zip(CSV_COLUMNS, rows[0].split(",")))
        assert first["format"] == "NRZ" and first["mode"] == "FullLut"
        assert first["eq_converged"] in ("true", "false")

    def test_bytes_repeat(self, tmp_path, config, lut):
        assert self.run(tmp_path, config, lut, "a.csv") == self.run(tmp_path, config, lut, "b.csv")

    def test_parallel_bytes_match(self, tmp_path, config, lut):
        serial = self.run(tmp_path, config, lut, "s.csv")
        assert self.run(tmp_path, config, lut, "p.csv", "--jobs", "3") == serial

    def test_seed_changes_output(self, tmp_path, config, lut):
        a = self.run(tmp_path, config, lut, "a.csv")
        assert self.run(tmp_path, config, lut, "b.csv", "--seed", "9") != a

    def test_global_flags_before_subcommand(self, tmp_path, config, lut):
        out = tmp_path / "g.csv"
        rc = main(["--config", config, "--out", str(out), "sweep", "--kind",
                   "ber-vs-preamble", "--lut", lut])
        assert rc == EXIT_OK
        assert out.read_text() == self.run(tmp_path, config, lut, "h.csv")

    def test_mode_flag_restricts_rows(self, tmp_path, config, lut):
        text = self.run(tmp_path, config, lut, "m.csv", "--mode", "NoLut")
        rows = [ln for ln in text.splitlines()[1:] if not ln.startswith("#")]
        assert len(rows) == 4 and all(",NoLut," in r for r in rows)

    def test_missing_lut(self, tmp_path, config, capsys):
        rc = main(["sweep", "--kind", "ber-vs-rop", "--config", config,
                   "--out", str(tmp_path / "x.csv")])
        assert rc == EXIT_LUT_MISSING
        assert "build-lut" in capsys.readouterr().err

    def test_bad_kind_is_usage_error(self, config):
        with pytest.raises(SystemExit) as exc:
            main(["sweep", "--kind", "ber-vs-moon", "--config", config])
        assert exc.value.code == EXIT_USAGE

    def test_single_cell(self, tmp_path):
        cfg = tmp_path / "one.ini"
        cfg.write_text("[grid]\nmodes = NoLut\npayload_len = 10000\nrops_dbm = -27\n")
        out = tmp_path / "one.csv"
        assert main(["sweep", "--kind", "ber-vs-rop", "--config", str(cfg),
                     "--out", str(out)]) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert not lines[1].startswith("#")
        assert all(ln.startswith("#") for ln in lines[2:]) and len(lines) > 2


class TestMinPreamble:
    def test_full_lut_needs_none(self, tmp_path, config, capsys):
        out = tmp_path / "mp.txt"
        rc = main(["min-preamble", "--config", config, "--mode", "FullLut", "--out", str(out)])
        assert rc == EXIT_OK
        assert "min_preamble=0" in out.read_text().splitlines()

    def test_stdout(self, config, capsys):
        assert main(["min-preamble", "--config", config, "--mode", "FullLut"]) == EXIT_OK
        assert "min_preamble=0\n" in capsys.readouterr().out

    def test_unresolved_baseline_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "quiet.ini"
        cfg.write_text("[min_preamble]\nrop_dbm = -20\npayload_len = 10000\n")
        assert main(["min-preamble", "--config", str(cfg), "--mode", "FullLut"]) == EXIT_BASELINE
        assert "increase payload" in capsys.readouterr().err


class TestConfigErrors:
    @pytest.mark.parametrize("text", [
        "[grid]\nrops = -20\n",
        "[colors]\nred = 1\n",
        "[cdr]\nkp = fast\n",
        "[cdr]\nkp = 0\n",
        "[grid]\nformats = QAM16\n",
        "[onus]\nx = NRZ, 5\n",
        "not a config",
    ])
    def test_rejected(self, tmp_path, text):
        path = tmp_path / "bad.ini"
        path.write_text(text)
        assert main(["build-lut", "--config", str(path), "--out", os.devnull]) == EXIT_CONFIG

    def test_bad_mode(self, config):
        assert main(["sweep", "--kind", "ber-vs-rop", "--config", config,
                     "--mode", "Sideways"]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["build-lut", "--config", str(tmp_path / "nope.ini")]) == EXIT_IO

    def test_bad_lut_file(self, tmp_path, config):
        lut = tmp_path / "bad.lut"
        lut.write_text("PONLUT v99\n")
        assert main(["sweep", "--kind", "ber-vs-rop", "--config", config, "--lut", str(lut),
                     "--out", os.devnull]) == EXIT_CONFIG

    def test_hash_tracks_settings(self):
        assert parse_config("").sha256 == parse_config("[cdr]\nkp = 8e-3\n").sha256
        assert parse_config("").sha256 != parse_config("[cdr]\nkp = 9e-3\n").sha256
        assert parse_config("", seed=1).sha256 != parse_config("", seed=2).sha256
