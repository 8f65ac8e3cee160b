"""Acceptance battery: every quantitative exit criterion as a callable check.

Each criterion returns a result record with the expected window, the observed
value and a pass flag; the CLI ``check`` command and the test suite both run
this battery.  Expensive artifacts (the exact-integration sweep, effective
runs) are computed once per context and shared.

Tolerance windows are pinned here, not calibrated at run time.  Two windows
are knowingly tight at the pinned cycle durations because the first-order
purity law carries large second-order corrections there; the battery reports
those honestly rather than widening them (see the sweep and purity-law
checks, and the cross-check report of the prediction criterion).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    convergence_sweep,
    dark_state_from_bloch,
    fit_loglog,
    gauge_covariance_check,
    purity,
    purity_prediction_general,
    trace_distance,
)
from .effective import (
    berry_holonomy,
    c_tau_ode_residual,
    dark_space,
    effective_jump,
    embed_dark,
    end_of_cycle_state,
    lab_generator,
)
from .engine import (
    HERMITICITY_TOL,
    POSITIVITY_TOL,
    TRACE_TOL,
    LindbladGenerator,
    asymptotic_channel,
    dark_block_kraus,
    integrate,
    kraus_from_channel,
    vectorize,
)
from .linalg import dagger, frobenius
from .protocols import linear_path, spin32_protocol

__all__ = ["CriterionResult", "AcceptanceContext", "run_battery", "CRITERIA"]

SWEEP_GAMMATS = (100.0, 200.0, 400.0, 800.0)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    expected: str
    observed: str
    passed: bool
    runtime_s: float
    detail: dict = field(default_factory=dict)


class AcceptanceContext:
    """Shared lazily-computed artifacts for the battery."""

    def __init__(self, tolerance_scale: float = 1.0, rtol: float = 1e-9, atol: float = 1e-12):
        self.scale = float(tolerance_scale)
        self.rtol = rtol
        self.atol = atol
        self.path = linear_path(1, 0)
        self.protocol_200 = spin32_protocol(self.path, 200.0)
        self.ds = dark_space(self.protocol_200.L_rot)
        self._cache: dict = {}

    def tol(self, value: float) -> float:
        return value * self.scale

    def _get(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    def factory(self, gammaT: float):
        return spin32_protocol(self.path, gammaT)

    @property
    def sweep(self):
        return self._get(
            "sweep",
            lambda: convergence_sweep(self.factory, SWEEP_GAMMATS, (0.0, 0.0, 1.0),
                                      rtol=self.rtol, atol=self.atol),
        )

    def exact_run(self, n0, gammaT):
        key = ("exact", tuple(n0), gammaT)

        def build():
            proto = self.factory(gammaT)
            rho_d = dark_state_from_bloch(n0)
            start = time.perf_counter()
            traj = integrate(
                lab_generator(proto),
                embed_dark(self.ds, rho_d),
                (0.0, gammaT),
                rtol=self.rtol,
                atol=self.atol,
                checkpoints=np.linspace(0.0, gammaT, 33),
            )
            return traj, time.perf_counter() - start

        return self._get(key, build)

    def effective_end(self, n0, gammaT):
        key = ("effective_end", tuple(n0), gammaT)
        return self._get(
            key,
            lambda: end_of_cycle_state(
                dark_state_from_bloch(n0), self.factory(gammaT), self.ds, method="integrate"
            ),
        )


def _window(value: float, lo: float, hi: float) -> bool:
    return lo <= value <= hi


def check_purity_law(ctx: AcceptanceContext) -> CriterionResult:
    """Exact one-cycle purity loss against the leading-order closed form."""
    start = time.perf_counter()
    rel_window = ctx.tol(0.15)
    detail: dict = {}
    passed = True
    runtime_total = 0.0
    for n0, prefactor in (((0.0, 0.0, 1.0), 4 * math.pi**2), ((0.0, 1.0, 0.0), 8 * math.pi**2)):
        traj, runtime = ctx.exact_run(n0, 200.0)
        runtime_total += runtime
        loss = 1.0 - purity(traj.final)
        predicted = prefactor / 200.0
        rel = abs(loss - predicted) / predicted
        detail[f"n0={n0}"] = {
            "loss_exact": loss,
            "loss_predicted": predicted,
            "relative_deviation": rel,
        }
        passed = passed and rel <= rel_window
    detail["runtime_s"] = runtime_total
    passed = passed and runtime_total <= 60.0
    observed = ", ".join(
        f"{v['relative_deviation']:.3f}" for k, v in detail.items() if k.startswith("n0")
    )
    return CriterionResult(
        1,
        "spin-3/2 purity law at gammaT=200",
        f"relative deviation <= {rel_window:.3g}, runtime <= 60 s",
        f"deviations {observed}; runtime {runtime_total:.1f} s",
        passed,
        time.perf_counter() - start,
        detail,
    )


def check_loss_scaling(ctx: AcceptanceContext) -> CriterionResult:
    """Algebraic 1/(gamma T) scaling of the exact purity loss."""
    start = time.perf_counter()
    sweep = ctx.sweep
    lo, hi = -1.0 - ctx.tol(0.15), -1.0 + ctx.tol(0.15)
    r2_min = 1.0 - ctx.tol(0.01)
    passed = _window(sweep.fitted_slope, lo, hi) and sweep.fit_r2 >= r2_min
    return CriterionResult(
        2,
        "loss scales as the minus first power",
        f"slope in [{lo:.2f}, {hi:.2f}], r^2 >= {r2_min:.2f}",
        f"slope {sweep.fitted_slope:.4f}, r^2 {sweep.fit_r2:.4f}",
        passed,
        time.perf_counter() - start,
        {"losses": sweep.losses, "gammaT": sweep.gammaT_values},
    )


def check_effective_order(ctx: AcceptanceContext) -> CriterionResult:
    """Order of accuracy of the reduced equation and its unitary truncation."""
    start = time.perf_counter()
    sweep = ctx.sweep
    lo2, hi2 = -2.0 - ctx.tol(0.4), -2.0 + ctx.tol(0.4)
    lo1, hi1 = -1.0 - ctx.tol(0.2), -1.0 + ctx.tol(0.2)
    ok2 = _window(sweep.error_slope, lo2, hi2)
    ok1 = _window(sweep.first_order_slope, lo1, hi1)
    return CriterionResult(
        3,
        "effective-equation accuracy orders",
        f"full slope in [{lo2:.2f}, {hi2:.2f}], unitary-only in [{lo1:.2f}, {hi1:.2f}]",
        f"full {sweep.error_slope:.3f}, unitary-only {sweep.first_order_slope:.3f}",
        ok2 and ok1,
        time.perf_counter() - start,
        {
            "distances": sweep.errors,
            "first_order_distances": sweep.first_order_errors,
        },
    )


def check_holonomy_trivial(ctx: AcceptanceContext) -> CriterionResult:
    """No Berry rotation accumulates over the single-winding cycle."""
    start = time.perf_counter()
    v = berry_holonomy(ctx.protocol_200, ctx.ds, 200.0)
    defect = frobenius(v - np.eye(ctx.ds.d))
    bound = ctx.tol(1e-8)
    return CriterionResult(
        4,
        "holonomy triviality for theta = 2 pi s",
        f"|V - 1| <= {bound:.3g}",
        f"|V - 1| = {defect:.3g}",
        defect <= bound,
        time.perf_counter() - start,
        {"defect": defect},
    )


def check_jump_closed_form(ctx: AcceptanceContext) -> CriterionResult:
    """Effective jump against a_tau = 0, b_tau = 2 pi (1 - e^{-3 tau / 2})."""
    start = time.perf_counter()
    sigma_z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    worst = 0.0
    for tau in np.linspace(0.0, 20.0, 81):
        ell = effective_jump(ctx.protocol_200, ctx.ds, float(tau))
        b = 2 * math.pi * (1.0 - math.exp(-1.5 * float(tau)))
        worst = max(worst, frobenius(ell - 1j * b * sigma_z))
    bound = ctx.tol(1e-6)
    return CriterionResult(
        5,
        "effective jump closed form",
        f"max deviation <= {bound:.3g} over tau in [0, 20]",
        f"max deviation {worst:.3g}",
        worst <= bound,
        time.perf_counter() - start,
        {"max_deviation": worst},
    )


def check_gauge_covariance(ctx: AcceptanceContext) -> CriterionResult:
    """Covariance defect shrinks with gamma T; purity is gauge insensitive."""
    start = time.perf_counter()
    sigma_z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    report = gauge_covariance_check(
        ctx.protocol_200, ctx.ds, (math.pi / 7.0) * sigma_z, gammaT_pair=(100.0, 200.0)
    )
    ratio_ok = report.defect_ratio <= ctx.tol(0.7)
    purity_ok = all(
        diff <= ctx.tol(10.0) / gammaT**2
        for diff, gammaT in zip(report.purity_differences, report.gammaT_values)
    )
    return CriterionResult(
        6,
        "gauge covariance of the effective jump",
        f"defect ratio <= {ctx.tol(0.7):.2f}; purity gauge difference <= 10/(gammaT)^2",
        f"ratio {report.defect_ratio:.3f}; purity diffs "
        + ", ".join(f"{d:.2e}" for d in report.purity_differences),
        ratio_ok and purity_ok,
        time.perf_counter() - start,
        {
            "defects": report.defects,
            "purity_differences": report.purity_differences,
        },
    )


def check_kernel_and_channel(ctx: AcceptanceContext) -> CriterionResult:
    """Memory-kernel ODE residual, channel idempotence, Kraus structure."""
    start = time.perf_counter()
    taus = np.linspace(0.2, 20.0, 64)
    residual = c_tau_ode_residual(ctx.protocol_200, ctx.ds, taus)
    sup = vectorize(LindbladGenerator(hamiltonian=None, jumps=(ctx.protocol_200.L_rot,)))
    channel = asymptotic_channel(sup)
    idem = frobenius(channel @ channel - channel)
    kraus = dark_block_kraus(kraus_from_channel(channel), ctx.ds.projector)
    completeness = frobenius(sum(dagger(m) @ m for m in kraus) - np.eye(ctx.protocol_200.dim))
    p0 = ctx.ds.projector
    n_dark = sum(
        1 for m in kraus if frobenius(p0 @ m @ p0 - p0) <= 1e-8
    )
    n_offblock = sum(1 for m in kraus if frobenius(p0 @ m @ p0) <= 1e-8)
    ok = (
        residual <= ctx.tol(1e-7)
        and idem <= ctx.tol(1e-8)
        and completeness <= ctx.tol(1e-8)
        and n_dark == 1
        and n_dark + n_offblock == len(kraus)
    )
    return CriterionResult(
        7,
        "kernel residual, asymptotic channel, Kraus structure",
        f"residual <= {ctx.tol(1e-7):.3g}; idempotence and completeness <= {ctx.tol(1e-8):.3g}; "
        "exactly one Kraus operator with dark block P0",
        f"residual {residual:.2e}; idem {idem:.2e}; completeness {completeness:.2e}; "
        f"{n_dark} dark-block operator(s) of {len(kraus)}",
        ok,
        time.perf_counter() - start,
        {"residual": residual, "idempotence": idem, "completeness": completeness},
    )


def check_structural_invariants(ctx: AcceptanceContext) -> CriterionResult:
    """Trace, Hermiticity, positivity and refinement self-consistency."""
    start = time.perf_counter()
    worst_trace = worst_herm = worst_neg = 0.0
    for n0 in ((0.0, 0.0, 1.0), (0.0, 1.0, 0.0)):
        traj, _ = ctx.exact_run(n0, 200.0)
        for state in traj.states:
            worst_trace = max(worst_trace, abs(np.trace(state).real - 1.0))
            worst_herm = max(worst_herm, frobenius(state - dagger(state)))
            worst_neg = max(worst_neg, -float(np.linalg.eigvalsh(state).min()))
    proto = ctx.factory(100.0)
    rho_full = embed_dark(ctx.ds, dark_state_from_bloch((0.0, 0.0, 1.0)))
    fine = integrate(lab_generator(proto), rho_full, (0.0, 100.0),
                     rtol=ctx.rtol, atol=ctx.atol).final
    finer = integrate(lab_generator(proto), rho_full, (0.0, 100.0),
                      rtol=ctx.rtol / 10.0, atol=ctx.atol / 10.0).final
    refinement = trace_distance(fine, finer)
    ok = (
        worst_trace <= ctx.tol(TRACE_TOL)
        and worst_herm <= ctx.tol(HERMITICITY_TOL)
        and worst_neg <= ctx.tol(POSITIVITY_TOL)
        and refinement <= ctx.tol(10.0 * ctx.rtol)
    )
    return CriterionResult(
        8,
        "structural invariants and integrator self-consistency",
        f"trace <= {ctx.tol(TRACE_TOL):.0e}, hermiticity <= {ctx.tol(HERMITICITY_TOL):.0e}, "
        f"negativity <= {ctx.tol(POSITIVITY_TOL):.0e}, refinement <= {ctx.tol(1e-8):.0e}",
        f"trace {worst_trace:.1e}, herm {worst_herm:.1e}, neg {worst_neg:.1e}, "
        f"refinement {refinement:.1e}",
        ok,
        time.perf_counter() - start,
        {
            "trace": worst_trace,
            "hermiticity": worst_herm,
            "negativity": worst_neg,
            "refinement": refinement,
        },
    )


def check_prediction_cross_check(ctx: AcceptanceContext) -> CriterionResult:
    """Frozen-state purity prediction against the integrated reduced purity.

    Passes on agreement within 10/(gamma T)^2, or on a filed discrepancy
    report carrying the measured residual exponent when the difference is
    systematic (the frozen-state formula linearizes the loss, so a clean
    power law with exponent near -2 is the expected signature).
    """
    start = time.perf_counter()
    n0 = (0.0, 0.0, 1.0)
    residuals = {}
    agree = True
    for gammaT in (200.0, 800.0):
        proto = ctx.factory(gammaT)
        pred = purity_prediction_general(dark_state_from_bloch(n0), proto, ctx.ds)
        direct = purity(ctx.effective_end(n0, gammaT))
        residuals[gammaT] = abs(pred - direct)
        agree = agree and residuals[gammaT] <= ctx.tol(10.0) / gammaT**2
    detail: dict = {"residuals": dict(residuals)}
    if agree:
        passed = True
        observed = "agreement: " + ", ".join(f"{gt:g}: {r:.2e}" for gt, r in residuals.items())
    else:
        grid = SWEEP_GAMMATS
        series = []
        for gammaT in grid:
            proto = ctx.factory(gammaT)
            pred = purity_prediction_general(dark_state_from_bloch(n0), proto, ctx.ds)
            direct = purity(ctx.effective_end(n0, gammaT))
            series.append(abs(pred - direct))
        slope, intercept, r2 = fit_loglog(grid, series)
        detail["discrepancy_report"] = {
            "gammaT": list(grid),
            "residuals": series,
            "exponent": slope,
            "prefactor": math.exp(intercept) if not math.isnan(intercept) else math.nan,
            "fit_r2": r2,
            "interpretation": "frozen-state prediction misses the quadratic-in-loss "
            "saturation; residual scales as a clean power law",
        }
        passed = (not math.isnan(slope)) and r2 >= 0.9
        observed = (
            "systematic residual: exponent "
            f"{slope:.3f} (r^2 {r2:.4f}), filed in discrepancy_report"
        )
    return CriterionResult(
        9,
        "purity prediction cross-check",
        "agreement within 10/(gammaT)^2 at gammaT in {200, 800}, or a filed "
        "discrepancy report with the measured residual exponent",
        observed,
        passed,
        time.perf_counter() - start,
        detail,
    )


CRITERIA = (
    check_purity_law,
    check_loss_scaling,
    check_effective_order,
    check_holonomy_trivial,
    check_jump_closed_form,
    check_gauge_covariance,
    check_kernel_and_channel,
    check_structural_invariants,
    check_prediction_cross_check,
)


def run_battery(
    tolerance_scale: float = 1.0,
    rtol: float = 1e-9,
    atol: float = 1e-12,
) -> list[CriterionResult]:
    """Run every acceptance criterion, sharing expensive artifacts."""
    ctx = AcceptanceContext(tolerance_scale=tolerance_scale, rtol=rtol, atol=atol)
    return [criterion(ctx) for criterion in CRITERIA]


def battery_table(results: list[CriterionResult]) -> str:
    """Aligned text table of criterion outcomes."""
    rows = [("#", "criterion", "expected", "observed", "status")]
    for r in results:
        rows.append((str(r.number), r.name, r.expected, r.observed, "pass" if r.passed else "FAIL"))
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(5)))
    return "\n".join(lines) + "\n"
