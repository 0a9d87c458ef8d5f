"""Dataset records, JSON Lines serialization and log-domain preprocessing.

A sample couples one fading realisation with its optimal power control.
Datasets are stored as JSON Lines, one object per sample with keys
{"M", "K", "morphology", "seed", "beta", "eta_opt", "sinr_opt"}; matrices
are flattened row-major.  Unlabeled samples simply omit the last two keys.
Floats are serialized with Python's shortest round-trip repr, so files are
bit-exact across writes and reads.

Both fading gains and power fractions span many orders of magnitude, so the
network works in log2 space: inputs and targets are log2-transformed and
standardised with scalar statistics computed over every entry of the
training set.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import (MORPHOLOGIES, Morphology, RadioDefaults, ScenarioConfig,
                      generate_deployment, generate_fading, make_scenario)
from .maxmin import BisectionConfig, SolverError, solve_maxmin
from .sinr import compute_alpha, compute_sinr, is_feasible

logger = logging.getLogger(__name__)

ETA_LOG_FLOOR = 1e-12
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class NormStats:
    """Scalar standardisation statistics for log2 inputs and outputs."""

    in_mean: float
    in_std: float
    out_mean: float
    out_std: float

    def __post_init__(self) -> None:
        for name in ("in_mean", "in_std", "out_mean", "out_std"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.in_std <= 0 or self.out_std <= 0:
            raise ValueError("stds must be positive")


@dataclass
class Sample:
    """One fading realisation, optionally labeled with the optimal control."""

    num_aps: int
    num_ues: int
    morphology: str
    seed: int
    beta: np.ndarray                 # (M, K) linear
    eta_opt: np.ndarray | None = None
    sinr_opt: np.ndarray | None = None

    @property
    def labeled(self) -> bool:
        return self.eta_opt is not None and self.sinr_opt is not None

    def validate(self, rho_d: float, rho_u: float, tau: int,
                 rel_tol: float = 1e-6) -> None:
        """Check label consistency: eta feasible, sinr matches recomputation."""
        if self.beta.shape != (self.num_aps, self.num_ues):
            raise ValueError(f"beta shape {self.beta.shape} does not match "
                             f"({self.num_aps}, {self.num_ues})")
        if not self.labeled:
            return
        if not is_feasible(self.eta_opt):
            raise ValueError("stored eta_opt violates the per-AP budget")
        alpha = compute_alpha(self.beta, rho_u, tau)
        sinr = compute_sinr(self.beta, alpha, self.eta_opt, rho_d)
        err = np.max(np.abs(sinr - self.sinr_opt) / np.maximum(self.sinr_opt, 1e-300))
        if err > rel_tol:
            raise ValueError(f"stored sinr_opt deviates from recomputation "
                             f"by {err:.3g} relative")


def sample_to_json(sample: Sample) -> str:
    doc: dict = {
        "M": sample.num_aps,
        "K": sample.num_ues,
        "morphology": sample.morphology,
        "seed": sample.seed,
        "beta": sample.beta.ravel().tolist(),
    }
    if sample.labeled:
        doc["eta_opt"] = sample.eta_opt.ravel().tolist()
        doc["sinr_opt"] = sample.sinr_opt.tolist()
    return json.dumps(doc, separators=(",", ":"))


def sample_from_json(line: str) -> Sample:
    doc = json.loads(line)
    m, k = int(doc["M"]), int(doc["K"])
    beta = np.array(doc["beta"], dtype=float).reshape(m, k)
    eta = sinr = None
    if "eta_opt" in doc:
        eta = np.array(doc["eta_opt"], dtype=float).reshape(m, k)
        sinr = np.array(doc["sinr_opt"], dtype=float)
    return Sample(num_aps=m, num_ues=k, morphology=doc["morphology"],
                  seed=int(doc["seed"]), beta=beta, eta_opt=eta, sinr_opt=sinr)


def write_jsonl(samples: list[Sample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(sample_to_json(sample) + "\n")


def read_jsonl(path: str) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(sample_from_json(line))
    return samples


def derive_sample_seed(run_seed: int, index: int) -> int:
    """Independent per-sample integer seed from a run seed and sample index."""
    ss = np.random.SeedSequence((run_seed, index))
    return int(ss.generate_state(1, np.uint64)[0])


def generate_unlabeled(scenarios: list[tuple[int, int, str, int]], run_seed: int,
                       radio: RadioDefaults | None = None,
                       morphologies: dict[str, Morphology] | None = None,
                       min_distance_m: float = 5.0) -> list[Sample]:
    """Draw fading realisations for a list of (M, K, morphology, count) specs.

    Sample i (indexed across the whole run) gets its own derived seed, so
    generation order and thread count cannot affect the values.
    """
    samples = []
    index = 0
    for num_aps, num_ues, morphology, count in scenarios:
        cfg = make_scenario(num_aps, num_ues, morphology, radio=radio,
                            min_distance_m=min_distance_m,
                            morphologies=morphologies)
        for _ in range(count):
            seed = derive_sample_seed(run_seed, index)
            rng = np.random.default_rng(seed)
            deployment = generate_deployment(cfg, rng)
            beta = generate_fading(deployment, cfg, rng)
            samples.append(Sample(num_aps=num_aps, num_ues=num_ues,
                                  morphology=morphology, seed=seed, beta=beta))
            index += 1
    return samples


def _label_one(args: tuple) -> tuple[np.ndarray, np.ndarray] | None:
    beta, rho_d, rho_u, tau, bis = args
    try:
        sol = solve_maxmin(beta, rho_d, rho_u, tau, config=bis)
    except SolverError:
        return None
    if not sol.converged:
        return None
    return sol.eta, sol.sinr


def label_samples(samples: list[Sample], radio: RadioDefaults | None = None,
                  bis: BisectionConfig | None = None, threads: int = 1,
                  tau_by_scenario: dict[tuple[int, int], int] | None = None
                  ) -> list[Sample]:
    """Attach optimal (eta, sinr) labels; failed solves are dropped and logged.

    Results are deterministic for any thread count because each solve is pure
    and outputs are collected in input order.
    """
    radio = radio if radio is not None else RadioDefaults()
    rho_d, rho_u = radio.rho_d(), radio.rho_u()

    def tau_of(sample: Sample) -> int:
        if tau_by_scenario is not None:
            key = (sample.num_aps, sample.num_ues)
            if key in tau_by_scenario:
                return tau_by_scenario[key]
        return sample.num_ues

    jobs = [(s.beta, rho_d, rho_u, tau_of(s), bis) for s in samples]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_label_one, jobs, chunksize=8))
    else:
        results = [_label_one(job) for job in jobs]

    labeled = []
    for sample, result in zip(samples, results):
        if result is None:
            logger.warning("solver failed on sample seed=%d (M=%d, K=%d); "
                           "sample skipped", sample.seed, sample.num_aps,
                           sample.num_ues)
            continue
        eta, sinr = result
        labeled.append(Sample(num_aps=sample.num_aps, num_ues=sample.num_ues,
                              morphology=sample.morphology, seed=sample.seed,
                              beta=sample.beta, eta_opt=eta, sinr_opt=sinr))
    return labeled


def generate_dataset(scenarios: list[tuple[int, int, str, int]], run_seed: int,
                     path: str, radio: RadioDefaults | None = None,
                     bis: BisectionConfig | None = None, threads: int = 1,
                     morphologies: dict[str, Morphology] | None = None) -> int:
    """Generate, label and write a dataset; returns the number of samples."""
    samples = generate_unlabeled(scenarios, run_seed, radio=radio,
                                 morphologies=morphologies)
    labeled = label_samples(samples, radio=radio, bis=bis, threads=threads)
    write_jsonl(labeled, path)
    return len(labeled)


def compute_norm_stats(samples: list[Sample]) -> NormStats:
    """Scalar log2 mean/std over all beta entries and all eta entries.

    Statistics must come from the training split only; checkpoints freeze
    them so that evaluation never recomputes anything.
    """
    if not samples:
        raise ValueError("cannot compute statistics of an empty sample list")
    logs_in = np.concatenate([np.log2(s.beta).ravel() for s in samples])
    in_mean = float(np.mean(logs_in))
    in_std = float(max(np.std(logs_in), STD_FLOOR))
    if all(s.labeled for s in samples):
        logs_out = np.concatenate([
            np.log2(np.maximum(s.eta_opt, ETA_LOG_FLOOR)).ravel()
            for s in samples])
        out_mean = float(np.mean(logs_out))
        out_std = float(max(np.std(logs_out), STD_FLOOR))
    else:
        out_mean, out_std = 0.0, 1.0
    return NormStats(in_mean=in_mean, in_std=in_std,
                     out_mean=out_mean, out_std=out_std)


def normalize_input(beta: np.ndarray, stats: NormStats) -> np.ndarray:
    """(log2(beta) - mean) / std, elementwise."""
    return (np.log2(beta) - stats.in_mean) / stats.in_std


def normalize_output(eta: np.ndarray, stats: NormStats) -> np.ndarray:
    floored = np.maximum(eta, ETA_LOG_FLOOR)
    return (np.log2(floored) - stats.out_mean) / stats.out_std


def denormalize_output(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert the output standardisation and the log2 transform."""
    return np.exp2(x * stats.out_std + stats.out_mean)


def preprocess(samples: list[Sample]) -> tuple[list[np.ndarray], NormStats]:
    """Normalized input features for each sample plus the fitted statistics."""
    stats = compute_norm_stats(samples)
    features = [normalize_input(s.beta, stats) for s in samples]
    return features, stats
