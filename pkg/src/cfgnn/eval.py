"""Evaluation metrics: spectral-efficiency CDFs, median and tail losses, FLOPs.

Per-user spectral efficiencies are pooled across all realizations into one
empirical CDF per method (optimal power control, the learned network, and
equal power per access point).  The tail metric reads the 5th percentile of
that pooled CDF, the rate that 95 percent of users meet or exceed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import make_scenario, generate_sample_fading
from .data import Sample, normalize_input
from .engine import count_flops, forward, project_powers
from .flops import FlopCounter
from .graph import build_graph
from .maxmin import BisectionConfig, solve_maxmin
from .model import GnnModel
from .sinr import compute_alpha, compute_sinr, spectral_efficiency

METHODS = ("optimal", "gnn", "equal_power")


@dataclass(frozen=True)
class EvalReport:
    scenario: str
    se_sorted: dict[str, np.ndarray]    # method -> pooled SEs, ascending
    loss_at_median: float               # percent, relative to optimal
    likely95_loss: float                # percent at the 5th percentile
    gnn_flops: int = 0
    solver_flops: int = 0

    def __post_init__(self) -> None:
        for method, se in self.se_sorted.items():
            if np.any(np.diff(se) < 0):
                raise ValueError(f"CDF samples for {method} not sorted")
        if not (np.isfinite(self.loss_at_median)
                and np.isfinite(self.likely95_loss)):
            raise ValueError("loss percentages must be finite")


def _percent_loss(se_opt: np.ndarray, se_method: np.ndarray, q: float) -> float:
    ref = float(np.percentile(se_opt, q))
    got = float(np.percentile(se_method, q))
    if ref == 0.0:
        return 0.0 if got == 0.0 else float("inf")
    return (ref - got) / ref * 100.0


def scenario_tag(num_aps: int, num_ues: int, morphology: str) -> str:
    return f"{num_aps}x{num_ues}:{morphology}"


def evaluate(model: GnnModel, eval_set: list[Sample], rho_d: float,
             rho_u: float, tau: int | None = None,
             scenario: str | None = None, include_flops: bool = True
             ) -> EvalReport:
    """Pooled per-user CDF comparison of the network against the labels.

    Every sample must carry its optimal solution.  tau defaults to each
    sample's user count.  FLOP counts are attached only when the set is a
    single (M, K) shape; they compare one network inference against one
    full instrumented bisection solve on a representative instance.
    """
    if not eval_set:
        raise ValueError("empty evaluation set")
    if not all(s.labeled for s in eval_set):
        raise ValueError("evaluation requires labeled samples")

    se: dict[str, list[float]] = {m: [] for m in METHODS}
    shapes = {(s.num_aps, s.num_ues) for s in eval_set}
    morphs = {s.morphology for s in eval_set}
    for sample in eval_set:
        m, k = sample.num_aps, sample.num_ues
        t = tau if tau is not None else k
        alpha = compute_alpha(sample.beta, rho_u, t)
        graph = build_graph(m, k)
        x = normalize_input(sample.beta, model.norm)
        eta_gnn = project_powers(forward(graph, x, model), model.norm)
        eta_eq = np.full((m, k), 1.0 / k)
        se["optimal"].extend(
            spectral_efficiency(np.asarray(sample.sinr_opt)).tolist())
        se["gnn"].extend(spectral_efficiency(
            compute_sinr(sample.beta, alpha, eta_gnn, rho_d)).tolist())
        se["equal_power"].extend(spectral_efficiency(
            compute_sinr(sample.beta, alpha, eta_eq, rho_d)).tolist())

    se_sorted = {m: np.sort(np.array(v)) for m, v in se.items()}
    loss_med = _percent_loss(se_sorted["optimal"], se_sorted["gnn"], 50.0)
    loss_95 = _percent_loss(se_sorted["optimal"], se_sorted["gnn"], 5.0)

    if scenario is None:
        if len(shapes) == 1 and len(morphs) == 1:
            (m, k), = shapes
            scenario = scenario_tag(m, k, next(iter(morphs)))
        else:
            scenario = "mixed"
    gnn_flops = solver_flops = 0
    if include_flops and len(shapes) == 1:
        (m, k), = shapes
        morph = next(iter(morphs)) if len(morphs) == 1 else "urban"
        gnn_flops, solver_flops = flop_comparison(m, k, model, morphology=morph)
    return EvalReport(scenario=scenario, se_sorted=se_sorted,
                      loss_at_median=loss_med, likely95_loss=loss_95,
                      gnn_flops=gnn_flops, solver_flops=solver_flops)


def flop_comparison(num_aps: int, num_ues: int, model: GnnModel | None = None,
                    seed: int = 0, morphology: str = "urban",
                    tau: int | None = None) -> tuple[int, int]:
    """(gnn_flops, solver_flops) for one inference vs one instrumented solve."""
    gnn = count_flops(num_aps, num_ues, model, mode="instrumented")
    cfg = make_scenario(num_aps, num_ues, morphology)
    beta = generate_sample_fading(cfg, seed)
    counter = FlopCounter()
    solve_maxmin(beta, cfg.rho_d, cfg.rho_u,
                 tau if tau is not None else num_ues,
                 BisectionConfig(), counter)
    return gnn, counter.total


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def export_cdf_csv(report: EvalReport, path: str) -> None:
    """One row per pooled user per method: se_bits_per_s_hz,cdf,method."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["se_bits_per_s_hz", "cdf", "method"])
        for method in METHODS:
            se = report.se_sorted[method]
            n = len(se)
            for i, value in enumerate(se):
                writer.writerow([_fmt(value), _fmt((i + 1) / n), method])


def export_summary_csv(reports: list[EvalReport], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "gnn_flops", "solver_flops",
                         "loss_median_pct", "likely95_loss_pct"])
        for report in reports:
            writer.writerow([report.scenario, report.gnn_flops,
                             report.solver_flops,
                             _fmt(report.loss_at_median),
                             _fmt(report.likely95_loss)])
