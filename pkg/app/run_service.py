"""
Run service: drives the kernels for each command, writes CSV/JSON artifacts and the run ledger.
"""

import csv
import json
from logging import getLogger
from pathlib import Path
from typing import Optional, List, Union

import numpy as np
from sqlalchemy import Engine
from sqlmodel import select, desc

from app.ansatz import Ansatz, ansatz_for
from app.database import get_session
from app.errors import GeometryError, ModelError, UnknownOracle
from app.flow import (
    FlowRun,
    FlowState,
    StepControls,
    derivative_check,
    integrate,
    monotonicity,
    oracle_compare,
    rhs_laplacian,
    rhs_primary,
)
from app.forms6 import standard_omega
from app.hitchin import CANONICAL_PHI, build, hitchin_checks, random_positive_form, symbol_spectrum
from app.liegeom import LieModel, identity_suite
from app.model_file import resolve_model
from app.models import (
    ENGINE_NAME,
    ENGINE_VERSION,
    Command,
    FlowSummary,
    GridSummary,
    IdentitySummary,
    OracleSummary,
    RunConfig,
    RunRecord,
    SymbolSummary,
)
from app.torusgrid import (
    DIFFUSIVITY,
    GridRun,
    GridState,
    rhs_general,
    rhs_reduced,
    run_to_equilibrium,
    terminal_residuals,
)

logger = getLogger(__name__)

Summary = Union[IdentitySummary, FlowSummary, GridSummary, SymbolSummary]

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

# first-mode amplitude below which no decay rate is fitted
RESOLVABLE_MODE = 1e-8


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


class RunService:
    """Service executing one configured command at a time."""

    def __init__(self):
        self.version = ENGINE_VERSION

    # ----- artifacts -----

    def _header(self, cfg: RunConfig) -> List[str]:
        return [f"# engine {ENGINE_NAME} {self.version}", f"# config {cfg.model_dump_json()}"]

    def write_flow_csv(self, path: Path, cfg: RunConfig, run: FlowRun) -> Path:
        p_values = list(run.rows[0].e_p) if run.rows else []
        columns = ["t", *run.ansatz.parameters, "u", "normNsq", "rMinusJsq"]
        columns += [f"E_{_fmt(p)}" for p in p_values] + ["positivity_margin", "stability_margin"]
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            handle.write("\n".join(self._header(cfg)) + "\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in run.rows:
                values = [row.t, *row.theta, row.u, row.norm_n_sq, row.r_minus_j_sq]
                values += [row.e_p[p] for p in p_values] + [row.positivity_margin, row.stability_margin]
                writer.writerow([_fmt(v) for v in values])
        logger.info(f"Wrote {len(run.rows)} flow rows to {path}")
        return path

    def write_grid_csv(self, path: Path, cfg: RunConfig, state: GridState) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            handle.write("\n".join(self._header(cfg)) + "\n")
            handle.write(f"# t {_fmt(state.t)}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["x", "a", "b", "c", "d"])
            for i, x in enumerate(state.x):
                writer.writerow([_fmt(x), *(_fmt(v) for v in state.fields[:, i])])
        return path

    def write_grid_series(self, path: Path, cfg: RunConfig, run: GridRun) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        p_values = list(run.rows[0].e_p)
        with path.open("w", newline="") as handle:
            handle.write("\n".join(self._header(cfg)) + "\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(
                ["t", "mean_a", "mean_b", "mean_c", "deviation", "first_mode", "sup_normNsq", "positivity"]
                + [f"E_{_fmt(p)}" for p in p_values]
            )
            for row in run.rows:
                values = [row.t, *row.means, row.deviation, row.first_mode, row.sup_norm_n_sq, row.positivity]
                writer.writerow([_fmt(v) for v in values + [row.e_p[p] for p in p_values]])
        return path

    def write_summary(self, path: Path, summary: Summary) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(summary.model_dump_json(indent=2) + "\n")
        logger.info(f"Wrote summary to {path}")
        return path

    def _output(self, cfg: RunConfig) -> Optional[Path]:
        return Path(cfg.output) if cfg.output else None

    # ----- commands -----

    def _initial_params(self, cfg: RunConfig, ansatz: Ansatz, model: LieModel) -> np.ndarray:
        if cfg.params:
            if len(cfg.params) != len(ansatz.parameters):
                raise ModelError(f"{ansatz.name} ansatz takes {len(ansatz.parameters)} parameters, got {len(cfg.params)}")
            return np.array(cfg.params, dtype=float)
        if ansatz.default:
            return np.array(ansatz.default, dtype=float)
        if model.base_phi is None:
            raise ModelError(f"model {model.name} has no base point; give params or a 'phi:' line")
        return ansatz.parameters_of(model.base_phi)

    def _sample(self, ansatz: Ansatz, model: LieModel, rng: np.random.Generator) -> FlowState:
        if ansatz.sample_ranges:
            return FlowState.at(model, ansatz.form(ansatz.sample(rng)))
        if model.base_phi is None:
            raise ModelError(f"model {model.name} has no base point to sample around")
        return FlowState.at(model, rng.uniform(0.5, 2.0) * model.base_phi)

    def verify(self, cfg: RunConfig) -> tuple[IdentitySummary, int]:
        """Identity suite and rhs cross-check over seeded random points of the model's ansatz."""
        model = resolve_model(cfg.model)
        ansatz = ansatz_for(model)
        rng = np.random.default_rng(cfg.seed)
        worst: dict[str, float] = {}
        dimension: Optional[int] = None
        for trial in range(cfg.trials):
            state = self._sample(ansatz, model, rng)
            report = identity_suite(state.cache, model, cfg.tolerance)
            primary, laplacian = rhs_primary(state), rhs_laplacian(state)
            report.residuals["rhs_equivalence"] = (primary - laplacian).norm_max() / max(1.0, primary.norm_max())
            # frame-independent Hitchin identities on a random symplectic frame
            frame_point = build(random_positive_form(rng), standard_omega())
            report.residuals.update({f"frame.{k}": v for k, v in hitchin_checks(frame_point).items()})
            for key, value in report.residuals.items():
                worst[key] = max(worst.get(key, 0.0), float(value))
            dimension = int(report.details["normal_frame_dimension"])
            logger.debug(f"verify {model.name} trial {trial}: passed={report.passed}")
        failures = sorted(k for k, v in worst.items() if not v < cfg.tolerance)
        summary = IdentitySummary(
            config=cfg,
            trials=cfg.trials,
            passed=not failures,
            max_residuals=dict(sorted(worst.items())),
            failures=failures,
            normal_frame_dimension=dimension,
        )
        out = self._output(cfg)
        if out is not None:
            self.write_summary(out / f"verify_{model.name}.json", summary)
        return summary, EXIT_OK if summary.passed else EXIT_FAILED

    def _flow_run(self, cfg: RunConfig) -> tuple[LieModel, FlowRun]:
        model = resolve_model(cfg.model)
        ansatz = ansatz_for(model)
        theta0 = self._initial_params(cfg, ansatz, model)
        controls = StepControls(
            max_growth=cfg.controls.max_growth,
            dt_floor=cfg.controls.dt_floor,
            gate_tol=cfg.controls.gate_tolerance,
            error_tol=cfg.controls.error_tolerance,
        )
        state = FlowState.at(model, ansatz.form(theta0))
        run = integrate(state, ansatz, cfg.dt, cfg.t_max, controls=controls, p_values=tuple(cfg.p_values))
        return model, run

    def _oracle_summary(self, run: FlowRun) -> Optional[OracleSummary]:
        try:
            report = oracle_compare(run)
        except UnknownOracle as e:
            logger.info(f"No oracle for {run.ansatz.name}: {e}")
            return None
        return OracleSummary(
            max_state_deviation=report.max_state_deviation,
            max_norm_n_deviation=report.max_norm_n_deviation,
            checked_until=report.checked_until,
            predicted_blowup=report.predicted_blowup,
            detected_blowup=list(report.detected_blowup) if report.detected_blowup else None,
            bracket_contains_prediction=report.bracket_contains_prediction,
            bracket_relative_width=report.bracket_relative_width,
            min_norm_n_sq=report.min_norm_n_sq,
            ratio_drift=report.ratio_drift,
            harmonic_residual=report.harmonic_residual,
        )

    def _flow_summary(self, cfg: RunConfig, run: FlowRun, oracle: Optional[OracleSummary], passed: bool) -> FlowSummary:
        last = run.rows[-1]
        return FlowSummary(
            config=cfg,
            ansatz=run.ansatz.name,
            parameters=list(run.ansatz.parameters),
            status="completed" if run.completed else "blowup",
            final_time=last.t,
            final_params=[float(v) for v in last.theta],
            final_direction=[float(v) for v in last.direction],
            blowup_bracket=list(run.blowup) if run.blowup else None,
            halvings=run.halvings,
            monotonicity=monotonicity(run),
            derivative_check=derivative_check(run),
            oracle=oracle,
            passed=passed,
        )

    def flow(self, cfg: RunConfig) -> tuple[FlowSummary, int]:
        """Integrate; a blow-up is a success only for ansatz families expected to blow up."""
        model, run = self._flow_run(cfg)
        passed = run.completed or run.ansatz.expects_blowup
        if not run.completed and not run.ansatz.expects_blowup:
            logger.error(f"Failed to reach t={cfg.t_max} on {model.name}: blow-up in {run.blowup}")
        summary = self._flow_summary(cfg, run, self._oracle_summary(run), passed)
        out = self._output(cfg)
        if out is not None:
            self.write_flow_csv(out / f"flow_{model.name}.csv", cfg, run)
            self.write_summary(out / f"flow_{model.name}.json", summary)
        return summary, EXIT_OK if passed else EXIT_FAILED

    def oracle(self, cfg: RunConfig) -> tuple[FlowSummary, int]:
        """Run the flow and grade it against the registered closed form."""
        model, run = self._flow_run(cfg)
        oracle = self._oracle_summary(run)
        if oracle is None:
            raise UnknownOracle(f"no closed-form solution for model {model.name}")
        passed = oracle.max_state_deviation < cfg.oracle_tolerance
        if oracle.predicted_blowup is not None:
            passed = passed and bool(oracle.bracket_contains_prediction)
            passed = passed and (oracle.bracket_relative_width or 1.0) < 0.01
        summary = self._flow_summary(cfg, run, oracle, passed)
        out = self._output(cfg)
        if out is not None:
            self.write_flow_csv(out / f"oracle_{model.name}.csv", cfg, run)
            self.write_summary(out / f"oracle_{model.name}.json", summary)
        return summary, EXIT_OK if passed else EXIT_FAILED

    def initial_grid(self, cfg: RunConfig) -> GridState:
        spec = cfg.grid
        return GridState.from_functions(cfg.n, spec.a.evaluate, spec.b.evaluate, spec.c.evaluate, spec.d.evaluate)

    def grid(self, cfg: RunConfig) -> tuple[GridSummary, int]:
        """Torus run on the heat reduction with the general evaluator compared at the initial data."""
        state = self.initial_grid(cfg)
        discrepancy = float(np.max(np.abs(rhs_general(state) - rhs_reduced(state))))
        run = run_to_equilibrium(state, cfg.t_max, cfg.dt, cfg.snapshot_times, tuple(cfg.p_values))
        rate: Optional[float] = None
        if run.rows[0].first_mode > RESOLVABLE_MODE:
            try:
                rate = run.decay_rate()
            except GeometryError as e:
                logger.info(f"Decay rate not measured: {e}")
        positivity = run.column("positivity")
        sup_n = run.column("sup_norm_n_sq")
        means = np.array([r.means for r in run.rows])
        residuals = terminal_residuals(run.final)
        verdicts = {
            "d_constant": bool(np.array_equal(run.final.d, state.d)),
            "positivity_nondecreasing": bool(np.all(np.diff(positivity) >= -1e-12)),
            "sup_norm_n_sq_fell": bool(sup_n[-1] <= sup_n[0]),
            "terminal_harmonic": max(residuals.values()) < cfg.harmonic_tolerance,
        }
        if rate is not None:
            verdicts["decay_rate"] = abs(rate / (DIFFUSIVITY * (2.0 * np.pi) ** 2) - 1.0) <= 0.05
        for p, ok in run.e_p_nondecreasing().items():
            verdicts[f"e_p[{p:g}]_nondecreasing"] = ok
        passed = all(verdicts.values())
        if not passed:
            failed = [name for name, ok in verdicts.items() if not ok]
            logger.error(f"Grid run n={state.n} to t={cfg.t_max} failed: {', '.join(failed)}")
        out = self._output(cfg)
        snapshots: List[str] = []
        if out is not None:
            for k, snap in enumerate(run.snapshots):
                snapshots.append(str(self.write_grid_csv(out / f"grid_snapshot_{k:03d}.csv", cfg, snap)))
            self.write_grid_series(out / "grid_series.csv", cfg, run)
        last = run.rows[-1]
        summary = GridSummary(
            config=cfg,
            n=state.n,
            dt=run.dt,
            final_time=run.final.t,
            evaluator_discrepancy=discrepancy,
            decay_rate=rate,
            first_mode_final=last.first_mode,
            sup_norm_n_sq_final=last.sup_norm_n_sq,
            mean_drift=float(np.max(np.abs(means - means[0]))),
            d_constant=verdicts["d_constant"],
            positivity_nondecreasing=verdicts["positivity_nondecreasing"],
            terminal_residuals=residuals,
            verdicts=verdicts,
            snapshots=snapshots,
            passed=passed,
        )
        if out is not None:
            self.write_summary(out / "grid.json", summary)
        return summary, EXIT_OK if passed else EXIT_FAILED

    def symbol(self, cfg: RunConfig) -> tuple[SymbolSummary, int]:
        """Principal symbol spectrum; canonical data uses xi = e^1 unless a covector is given."""
        rng = np.random.default_rng(cfg.seed)
        if cfg.canonical:
            data = build(CANONICAL_PHI, standard_omega())
        else:
            data = build(random_positive_form(rng), standard_omega())
        if cfg.covector is not None:
            xi = np.array(cfg.covector, dtype=float)
        elif cfg.canonical:
            xi = np.eye(6)[0]
        else:
            xi = rng.standard_normal(6)
        report = symbol_spectrum(data, xi)
        passed = report.matches(tol=cfg.tolerance * 10.0)
        summary = SymbolSummary(config=cfg, eigenvalues=list(report.eigenvalues), passed=passed)
        out = self._output(cfg)
        if out is not None:
            self.write_summary(out / "symbol.json", summary)
        return summary, EXIT_OK if passed else EXIT_FAILED

    def execute(self, cfg: RunConfig) -> tuple[Summary, int]:
        logger.info(f"Running {cfg.command.value} on {cfg.model} (seed {cfg.seed})")
        match cfg.command:
            case Command.VERIFY:
                return self.verify(cfg)
            case Command.FLOW:
                return self.flow(cfg)
            case Command.GRID:
                return self.grid(cfg)
            case Command.ORACLE:
                return self.oracle(cfg)
            case Command.SYMBOL:
                return self.symbol(cfg)

    # ----- ledger -----

    def record(self, engine: Engine, cfg: RunConfig, summary: Summary, exit_code: int) -> Optional[RunRecord]:
        """Append a run to the ledger."""
        try:
            with get_session(engine) as session:
                record = RunRecord(
                    command=cfg.command,
                    model=cfg.model,
                    seed=cfg.seed,
                    passed=summary.passed,
                    exit_code=exit_code,
                    config_json=cfg.model_dump_json(),
                    summary_json=summary.model_dump_json(),
                )
                session.add(record)
                session.commit()
                session.refresh(record)
                return RunRecord(**record.model_dump())
        except Exception as e:
            logger.error(f"Failed to record run: {e}")
            return None

    def recent_runs(self, engine: Engine, limit: int = 20) -> List[RunRecord]:
        """Ledger entries, newest first."""
        try:
            with get_session(engine) as session:
                statement = select(RunRecord).order_by(desc(RunRecord.id)).limit(limit)
                return [RunRecord(**r.model_dump()) for r in session.exec(statement).all()]
        except Exception as e:
            logger.error(f"Failed to list runs: {e}")
            return []

    def describe(self, record: RunRecord) -> str:
        status = "PASS" if record.passed else "FAIL"
        summary = json.loads(record.summary_json)
        extra = summary.get("status", "")
        return f"{record.id} {record.command.value} {record.model} seed={record.seed} exit={record.exit_code} {status} {extra}".rstrip()


# Global run service instance
run_service = RunService()
