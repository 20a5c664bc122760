"""
Tests for the command-line surface.
"""

import json
import logging

import pytest

from app.cli import build_parser, config_from_args, configure_logging, main
from app.database import get_engine
from app.model_file import MODEL_DIR
from app.models import Command


@pytest.fixture()
def ledger_url(tmp_path):
    yield f"sqlite:///{tmp_path / 'runs.db'}"
    get_engine.cache_clear()


class TestConfig:
    """Flags and JSON documents both become a RunConfig."""

    def test_flags(self):
        """SOLV initial data comes from the named flags."""
        args = build_parser().parse_args(["flow", "--model", "solv", "--alpha0", "1", "--beta0", "1",
                                          "--gamma0", "0.5", "--delta0", "0.4", "--dt", "1e-4"])
        cfg = config_from_args(args)
        assert cfg.command == Command.FLOW
        assert cfg.params == [1.0, 1.0, 0.5, 0.4]
        assert cfg.dt == 1e-4

    def test_prefix_params(self):
        """A leading subset of the parameter flags is accepted."""
        args = build_parser().parse_args(["flow", "--a0", "0.5", "--b0", "0.1"])
        assert config_from_args(args).params == [0.5, 0.1]

    def test_document_then_flags(self, tmp_path):
        """Flags override the JSON document field by field."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"model": "nil", "dt": 0.01, "t_max": 0.1, "seed": 4}))
        args = build_parser().parse_args(["--config", str(path), "flow", "--tmax", "0.2"])
        cfg = config_from_args(args)
        assert cfg.dt == 0.01
        assert cfg.t_max == 0.2
        assert cfg.seed == 4

    def test_snapshots_accumulate(self):
        """Repeated --snapshot flags collect in order."""
        args = build_parser().parse_args(["grid", "--snapshot", "0.1", "--snapshot", "0.2"])
        assert config_from_args(args).snapshot_times == [0.1, 0.2]


class TestLogging:
    """The console script configures logging itself."""

    @pytest.fixture()
    def root_level(self):
        root = logging.getLogger()
        level = root.level
        yield root
        root.setLevel(level)

    def test_verbose_enables_debug(self, root_level):
        """--verbose lowers the root level to DEBUG and a handler is installed."""
        assert main(["--verbose", "symbol", "--canonical"]) == 0
        assert root_level.level == logging.DEBUG
        assert root_level.handlers

    def test_engine_logs_quieted(self, root_level):
        """SQLAlchemy engine chatter stays at WARNING."""
        configure_logging()
        assert logging.getLogger("sqlalchemy.engine.Engine").level == logging.WARNING


class TestMain:
    """Exit codes and printed summaries."""

    def test_symbol_canonical(self, capsys):
        """The canonical symbol line lists the spectrum and the verdict."""
        assert main(["symbol", "--canonical"]) == 0
        assert capsys.readouterr().out.strip() == "1 1 1 1 0 PASS"

    def test_verify_torus(self, capsys):
        """The identity suite prints a passing JSON summary."""
        assert main(["verify", "--model", "torus", "--trials", "2"]) == 0
        document = json.loads(capsys.readouterr().out)
        assert document["passed"]
        assert document["failures"] == []

    def test_flow_to_output(self, tmp_path, capsys):
        """NIL flow to t = 0.5 reaches a = 4 and writes its CSV."""
        code = main(["flow", "--model", "nil", "--dt", "0.01", "--tmax", "0.5", "--output", str(tmp_path)])
        assert code == 0
        document = json.loads(capsys.readouterr().out)
        assert document["final_params"][0] == pytest.approx(4.0, abs=1e-10)
        assert (tmp_path / "flow_nil.csv").exists()

    def test_grid_verdict(self, capsys):
        """An unrelaxed grid run exits 1; a relaxed one exits 0."""
        assert main(["grid", "--n", "16", "--tmax", "0.01"]) == 1
        capsys.readouterr()
        assert main(["grid", "--n", "16", "--tmax", "0.1"]) == 0
        document = json.loads(capsys.readouterr().out)
        assert document["passed"]
        assert document["verdicts"]["terminal_harmonic"]

    def test_malformed_model_file(self, tmp_path, capsys):
        """Model-file errors exit 2 and name the offending line."""
        path = tmp_path / "bad.model"
        path.write_text("name: bad\ngenerators: e1 e2 e3 e4 e5 e6\nd e9: +1 e1 e2\n")
        assert main(["verify", "--model", str(path)]) == 2
        assert f"{path}:3:" in capsys.readouterr().err

    def test_unknown_model(self):
        """An unknown model name is a configuration error."""
        assert main(["flow", "--model", "no-such-model"]) == 2

    def test_partial_solv_params(self):
        """SOLV needs all four parameters or none."""
        assert main(["flow", "--model", "solv", "--alpha0", "1"]) == 2

    def test_invalid_config(self, tmp_path):
        """A negative dt in the JSON document is a configuration error."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"dt": -1.0}))
        assert main(["--config", str(path), "flow"]) == 2

    def test_oracle_without_closed_form(self):
        """A file model has no closed form to grade against."""
        assert main(["oracle", "--model", str(MODEL_DIR / "nil.model"), "--dt", "0.01", "--tmax", "0.02"]) == 2


class TestRuns:
    """Ledger listing."""

    def test_needs_ledger(self):
        """Listing runs without --ledger is a configuration error."""
        assert main(["runs"]) == 2

    def test_listing(self, ledger_url, capsys):
        """Recorded runs are listed newest first."""
        assert main(["--ledger", ledger_url, "symbol", "--canonical"]) == 0
        assert main(["--ledger", ledger_url, "verify", "--model", "torus", "--trials", "1"]) == 0
        capsys.readouterr()
        assert main(["--ledger", ledger_url, "runs"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2
        assert " verify torus " in lines[0]
        assert " symbol " in lines[1]
        assert lines[1].endswith("PASS")
