"""
Tests for the run service: commands, artifacts and the run ledger.
"""

import csv
import json

import numpy as np
import pytest

from app.errors import ModelError, UnknownOracle
from app.model_file import MODEL_DIR
from app.models import Command, FieldSpec, FlowControls, FourierMode, GridFields, RunConfig, SymbolSummary
from app.run_service import EXIT_FAILED, EXIT_OK, RunService, run_service


def _data_rows(path) -> list[dict[str, str]]:
    lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture()
def nil_flow_config(tmp_path) -> RunConfig:
    return RunConfig(command=Command.FLOW, model="nil", dt=1e-3, t_max=1.0, output=str(tmp_path))


class TestVerify:
    """Identity suite over random points."""

    def test_nil(self):
        """NIL points pass with an 8-dimensional normal frame."""
        summary, code = run_service.verify(RunConfig(command=Command.VERIFY, model="nil", trials=3))
        assert code == EXIT_OK
        assert summary.passed, summary.failures
        assert summary.normal_frame_dimension == 8
        assert "rhs_equivalence" in summary.max_residuals
        assert any(key.startswith("frame.") for key in summary.max_residuals)

    def test_torus_and_solv(self):
        """Torus and SOLV points pass."""
        for model in ("torus", "solv"):
            summary, code = run_service.verify(RunConfig(command=Command.VERIFY, model=model, trials=2, seed=5))
            assert code == EXIT_OK, summary.failures

    def test_model_file(self):
        """A model file runs the suite on the full family."""
        cfg = RunConfig(command=Command.VERIFY, model=str(MODEL_DIR / "solv.model"), trials=2)
        summary, code = run_service.verify(cfg)
        assert code == EXIT_OK, summary.failures

    @pytest.mark.slow
    def test_hundred_points_per_family(self):
        """100 random points per family pass."""
        for model in ("torus", "nil", "solv"):
            summary, code = run_service.verify(RunConfig(command=Command.VERIFY, model=model, trials=100, seed=11))
            assert code == EXIT_OK, summary.failures

    def test_summary_written(self, tmp_path):
        """The JSON summary echoes the engine and the configuration."""
        cfg = RunConfig(command=Command.VERIFY, model="torus", trials=1, output=str(tmp_path))
        run_service.verify(cfg)
        document = json.loads((tmp_path / "verify_torus.json").read_text())
        assert document["engine"] == "iia-flow"
        assert document["config"]["model"] == "torus"


class TestFlow:
    """Flow command and its CSV artifacts."""

    def test_nil_csv(self, nil_flow_config, tmp_path):
        """The NIL CSV carries the header comments and reaches a = 8."""
        summary, code = run_service.flow(nil_flow_config)
        assert code == EXIT_OK
        assert summary.status == "completed"
        assert summary.final_params[0] == pytest.approx(8.0, abs=1e-8)

        path = tmp_path / "flow_nil.csv"
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# engine iia-flow ")
        assert lines[1].startswith("# config ")
        rows = _data_rows(path)
        assert list(rows[0])[:5] == ["t", "a", "b", "u", "normNsq"]
        assert len(rows) >= 1001
        assert float(rows[-1]["a"]) == pytest.approx(8.0, abs=1e-8)
        assert (tmp_path / "flow_nil.json").exists()

    def test_deterministic(self, nil_flow_config, tmp_path):
        """Two runs of the same configuration write identical bytes."""
        run_service.flow(nil_flow_config)
        first = (tmp_path / "flow_nil.csv").read_bytes()
        RunService().flow(nil_flow_config)
        assert (tmp_path / "flow_nil.csv").read_bytes() == first

    def test_solv_blowup_is_expected(self):
        """A SOLV blow-up is a success when bracketed around T."""
        cfg = RunConfig(command=Command.FLOW, model="solv", dt=1e-3, t_max=1.0)
        summary, code = run_service.flow(cfg)
        assert code == EXIT_OK
        assert summary.status == "blowup"
        assert summary.blowup_bracket is not None
        assert summary.oracle is not None
        assert summary.oracle.bracket_contains_prediction

    def test_wrong_parameter_count(self):
        """Initial data must match the family's parameters."""
        cfg = RunConfig(command=Command.FLOW, model="nil", params=[1.0])
        with pytest.raises(ModelError):
            run_service.flow(cfg)

    def test_model_file_uses_base_point(self):
        """File models start at their base point with no oracle."""
        cfg = RunConfig(command=Command.FLOW, model=str(MODEL_DIR / "nil.model"), dt=1e-2, t_max=0.1)
        summary, code = run_service.flow(cfg)
        assert code == EXIT_OK
        assert summary.ansatz == "full"
        assert summary.oracle is None


class TestOracle:
    """Grading runs against closed forms."""

    def test_solv(self, tmp_path):
        """SOLV is graded against its closed form and blow-up time."""
        cfg = RunConfig(command=Command.ORACLE, model="solv", dt=1e-4, t_max=1.0, output=str(tmp_path))
        summary, code = run_service.oracle(cfg)
        assert code == EXIT_OK
        assert summary.oracle is not None
        assert summary.oracle.max_state_deviation < 1e-6
        assert summary.oracle.bracket_relative_width < 0.01
        assert (tmp_path / "oracle_solv.csv").exists()

    def test_coarse_bracket_fails(self):
        """A step floor of 1e-2 cannot bracket the blow-up within 1%."""
        cfg = RunConfig(command=Command.ORACLE, model="solv", dt=1e-2, controls=FlowControls(dt_floor=1e-2))
        summary, code = run_service.oracle(cfg)
        assert code == EXIT_FAILED
        assert not summary.passed

    def test_no_closed_form(self):
        """File models have nothing to grade against."""
        cfg = RunConfig(command=Command.ORACLE, model=str(MODEL_DIR / "nil.model"), dt=1e-2, t_max=0.05)
        with pytest.raises(UnknownOracle):
            run_service.oracle(cfg)


class TestGrid:
    """Torus grid command."""

    def test_relaxation(self, tmp_path):
        """The default single mode relaxes to a harmonic form and every verdict holds."""
        cfg = RunConfig(command=Command.GRID, n=16, t_max=0.1, snapshot_times=[0.02], output=str(tmp_path))
        summary, code = run_service.grid(cfg)
        assert code == EXIT_OK
        assert summary.passed
        assert all(summary.verdicts.values()), summary.verdicts
        expected = {"decay_rate", "terminal_harmonic", "e_p[0.5]_nondecreasing", "e_p[1]_nondecreasing"}
        assert expected <= set(summary.verdicts)
        assert summary.terminal_residuals["constant"] < 1e-6
        assert summary.d_constant
        assert summary.positivity_nondecreasing
        assert summary.mean_drift < 1e-12
        assert summary.decay_rate == pytest.approx(16.0 * np.pi**2, rel=0.05)
        assert len(summary.snapshots) == 1
        assert (tmp_path / "grid_series.csv").exists()
        assert (tmp_path / "grid.json").exists()
        snapshot = _data_rows(tmp_path / "grid_snapshot_000.csv")
        assert len(snapshot) == 16
        assert list(snapshot[0]) == ["x", "a", "b", "c", "d"]

    def test_custom_fields(self):
        """Fields come from Fourier specs; a mode-free a gets no decay verdict."""
        fields = GridFields(
            a=FieldSpec(mean=2.0),
            b=FieldSpec(mean=2.0, modes=[FourierMode(mode=1, cos=0.2)]),
            c=FieldSpec(mean=0.1),
            d=FieldSpec(mean=0.5),
        )
        cfg = RunConfig(command=Command.GRID, n=16, t_max=0.01, grid=fields)
        state = run_service.initial_grid(cfg)
        assert state.b[0] == pytest.approx(2.2)
        assert np.all(state.d == 0.5)
        summary, _ = run_service.grid(cfg)
        assert summary.d_constant
        assert summary.snapshots == []
        assert summary.decay_rate is None
        assert "decay_rate" not in summary.verdicts

    def test_unrelaxed_run_fails(self):
        """A run stopped before the mode has decayed is not harmonic and fails."""
        cfg = RunConfig(command=Command.GRID, n=16, t_max=0.01)
        summary, code = run_service.grid(cfg)
        assert code == EXIT_FAILED
        assert not summary.passed
        assert not summary.verdicts["terminal_harmonic"]
        assert summary.verdicts["positivity_nondecreasing"]
        assert summary.verdicts["d_constant"]

    def test_harmonic_tolerance(self):
        """A loose harmonic tolerance accepts the same short run."""
        cfg = RunConfig(command=Command.GRID, n=16, t_max=0.01, harmonic_tolerance=0.1)
        summary, code = run_service.grid(cfg)
        assert code == EXIT_OK
        assert summary.passed


class TestSymbol:
    """Principal symbol command."""

    def test_canonical(self):
        """The canonical symbol spectrum is 0, 1, 1, 1, 1."""
        summary, code = run_service.symbol(RunConfig(command=Command.SYMBOL, canonical=True))
        assert code == EXIT_OK
        assert sorted(summary.eigenvalues) == pytest.approx([0.0, 1.0, 1.0, 1.0, 1.0], abs=1e-9)

    def test_random(self):
        """A random positive form passes the symbol check."""
        summary, code = run_service.symbol(RunConfig(command=Command.SYMBOL, seed=3, tolerance=1e-7))
        assert code == EXIT_OK
        assert summary.passed

    def test_dispatch(self):
        """execute routes to the command's handler."""
        summary, code = run_service.execute(RunConfig(command=Command.SYMBOL, canonical=True, covector=[0, 0, 1, 0, 0, 0]))
        assert isinstance(summary, SymbolSummary)
        assert code == EXIT_OK


class TestLedger:
    """Run records in the sqlite ledger."""

    def test_record_and_list(self, ledger):
        """Recorded runs come back newest first with their configuration."""
        cfg = RunConfig(command=Command.SYMBOL, canonical=True)
        summary, code = run_service.symbol(cfg)
        record = run_service.record(ledger, cfg, summary, code)
        assert record is not None
        assert record.id is not None
        assert record.passed

        run_service.record(ledger, RunConfig(command=Command.VERIFY, model="torus"), summary, EXIT_FAILED)
        runs = run_service.recent_runs(ledger)
        assert [r.command for r in runs] == [Command.VERIFY, Command.SYMBOL]
        assert json.loads(runs[1].config_json)["canonical"] is True
        assert "PASS" in run_service.describe(runs[1])
        assert "exit=1" in run_service.describe(runs[0])

    def test_limit(self, ledger):
        """The listing respects its limit."""
        cfg = RunConfig(command=Command.SYMBOL, canonical=True)
        summary, code = run_service.symbol(cfg)
        for _ in range(3):
            run_service.record(ledger, cfg, summary, code)
        assert len(run_service.recent_runs(ledger, limit=2)) == 2

    def test_empty(self, ledger):
        """An empty ledger lists nothing."""
        assert run_service.recent_runs(ledger) == []
