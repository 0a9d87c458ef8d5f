"""Large-scale fading generation for cell-free massive MIMO scenarios.

A scenario places M single-antenna access points and K single-antenna users
uniformly at random inside a disc.  The large-scale fading coefficient
between AP m and user k is

    beta[m, k] = 10 ** (-(PL(d_mk) + X_mk) / 10)

where PL is a log-distance path loss in dB and X_mk is i.i.d. log-normal
shadow fading.  All coefficients are kept in linear scale; downstream code
works with log2(beta) when it needs a compressed dynamic range.

Conventions used throughout the package:
    * beta has shape (M, K): rows are APs, columns are users.
    * Distances are in metres, powers in mW, bandwidth in Hz.
    * rho_d and rho_u are transmit powers normalised by the noise power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

BOLTZMANN_J_PER_K = 1.380649e-23


@dataclass(frozen=True)
class Morphology:
    """Propagation environment for the log-distance path loss model.

    path_loss_db(d) = pl_intercept_db + 10 * pl_exponent * log10(d metres),
    with log-normal shadowing of standard deviation shadow_sigma_db.
    """

    name: str
    radius_m: float
    pl_exponent: float
    pl_intercept_db: float
    shadow_sigma_db: float

    def __post_init__(self) -> None:
        if self.radius_m <= 0:
            raise ValueError(f"radius_m must be positive, got {self.radius_m}")
        if self.pl_exponent <= 0:
            raise ValueError(f"pl_exponent must be positive, got {self.pl_exponent}")
        if self.shadow_sigma_db < 0:
            raise ValueError(f"shadow_sigma_db must be >= 0, got {self.shadow_sigma_db}")


MORPHOLOGIES: dict[str, Morphology] = {
    "urban": Morphology("urban", radius_m=500.0, pl_exponent=3.67,
                        pl_intercept_db=30.5, shadow_sigma_db=8.0),
    "suburban": Morphology("suburban", radius_m=1000.0, pl_exponent=3.91,
                           pl_intercept_db=19.0, shadow_sigma_db=8.0),
    "rural": Morphology("rural", radius_m=4000.0, pl_exponent=3.91,
                        pl_intercept_db=14.0, shadow_sigma_db=8.0),
}


@dataclass(frozen=True)
class RadioDefaults:
    """Link-budget constants used to derive the normalised powers."""

    tx_power_dl_mw: float = 200.0
    tx_power_ul_mw: float = 100.0
    bandwidth_hz: float = 20e6
    noise_figure_db: float = 9.0
    temperature_k: float = 290.0

    def noise_power_mw(self) -> float:
        noise_figure = 10.0 ** (self.noise_figure_db / 10.0)
        watts = BOLTZMANN_J_PER_K * self.temperature_k * self.bandwidth_hz * noise_figure
        return watts * 1e3

    def rho_d(self) -> float:
        """Downlink transmit power normalised by the noise power."""
        return self.tx_power_dl_mw / self.noise_power_mw()

    def rho_u(self) -> float:
        """Uplink pilot transmit power normalised by the noise power."""
        return self.tx_power_ul_mw / self.noise_power_mw()


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to generate one fading realisation deterministically."""

    num_aps: int
    num_ues: int
    morphology: Morphology
    rho_d: float
    rho_u: float
    tau: int
    min_distance_m: float = 5.0

    def __post_init__(self) -> None:
        if self.num_aps < 1:
            raise ValueError(f"num_aps must be >= 1, got {self.num_aps}")
        if self.num_ues < 1:
            raise ValueError(f"num_ues must be >= 1, got {self.num_ues}")
        if self.rho_d <= 0 or self.rho_u <= 0:
            raise ValueError("rho_d and rho_u must be positive")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.min_distance_m <= 0:
            raise ValueError("min_distance_m must be positive")


def make_scenario(num_aps: int, num_ues: int, morphology: str | Morphology,
                  radio: RadioDefaults | None = None,
                  tau: int | None = None,
                  min_distance_m: float = 5.0,
                  morphologies: dict[str, Morphology] | None = None) -> ScenarioConfig:
    """Build a ScenarioConfig from sizes and a morphology name.

    tau defaults to num_ues (orthogonal pilots, one per user).
    """
    if isinstance(morphology, str):
        table = morphologies if morphologies is not None else MORPHOLOGIES
        if morphology not in table:
            raise ValueError(f"unknown morphology {morphology!r}; "
                             f"expected one of {sorted(table)}")
        morphology = table[morphology]
    radio = radio if radio is not None else RadioDefaults()
    return ScenarioConfig(
        num_aps=num_aps,
        num_ues=num_ues,
        morphology=morphology,
        rho_d=radio.rho_d(),
        rho_u=radio.rho_u(),
        tau=tau if tau is not None else num_ues,
        min_distance_m=min_distance_m,
    )


@dataclass(frozen=True)
class Deployment:
    """AP and user positions, in metres, relative to the disc centre."""

    ap_positions: np.ndarray  # (M, 2)
    ue_positions: np.ndarray  # (K, 2)


def _uniform_disc(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """Draw n points uniformly over a disc of the given radius.

    Radius uses the sqrt transform so that density is uniform over area.
    Draw order (radii first, then angles) is part of the determinism contract.
    """
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    return np.column_stack((r * np.cos(theta), r * np.sin(theta)))


def generate_deployment(cfg: ScenarioConfig, rng: np.random.Generator) -> Deployment:
    """Place APs then users uniformly over the scenario disc."""
    aps = _uniform_disc(rng, cfg.num_aps, cfg.morphology.radius_m)
    ues = _uniform_disc(rng, cfg.num_ues, cfg.morphology.radius_m)
    return Deployment(ap_positions=aps, ue_positions=ues)


def path_loss_db(distance_m: np.ndarray | float, morphology: Morphology) -> np.ndarray | float:
    """Log-distance path loss in dB at the given distance(s) in metres."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    out = morphology.pl_intercept_db + 10.0 * morphology.pl_exponent * np.log10(d)
    return float(out) if np.isscalar(distance_m) else out


def generate_fading(deployment: Deployment, cfg: ScenarioConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Large-scale fading matrix beta with shape (M, K), linear scale.

    Distances below cfg.min_distance_m are clamped up to it before the path
    loss is evaluated, which keeps the near-field singularity out of the
    model.  Shadow fading draws one normal per (AP, user) pair in row-major
    order.
    """
    diff = deployment.ap_positions[:, None, :] - deployment.ue_positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    dist = np.maximum(dist, cfg.min_distance_m)
    pl = path_loss_db(dist, cfg.morphology)
    shadow = rng.standard_normal(dist.shape) * cfg.morphology.shadow_sigma_db
    beta = 10.0 ** (-(pl + shadow) / 10.0)
    return beta


def generate_sample_fading(cfg: ScenarioConfig, seed: int, index: int = 0) -> np.ndarray:
    """Deterministic fading draw for sample `index` of a dataset seeded by `seed`.

    The stream is derived from SeedSequence((seed, index)) so that distinct
    (seed, index) pairs get independent, reproducible streams.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, index)))
    deployment = generate_deployment(cfg, rng)
    return generate_fading(deployment, cfg, rng)


_MORPHOLOGY_FIELDS = {"radius_m", "pl_exponent", "pl_intercept_db", "shadow_sigma_db"}
_RADIO_FIELDS = {"tx_power_dl_mw", "tx_power_ul_mw", "bandwidth_hz",
                 "noise_figure_db", "temperature_k"}


def load_overrides(path: str) -> tuple[dict[str, Morphology], RadioDefaults, dict[str, float]]:
    """Parse a key=value config file overriding morphology and radio defaults.

    Recognised keys:
        <morphology>.<field>   e.g. urban.radius_m=600
        <radio field>          e.g. bandwidth_hz=10e6
        min_distance_m, tau    scenario-level overrides (returned in a dict)

    Lines starting with '#' and blank lines are ignored.  Unknown keys raise
    ValueError so that typos do not silently fall back to defaults.
    """
    morphologies = dict(MORPHOLOGIES)
    radio_kwargs: dict[str, float] = {}
    scenario_overrides: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if "." in key:
                morph_name, _, field_name = key.partition(".")
                if morph_name not in morphologies:
                    raise ValueError(f"{path}:{lineno}: unknown morphology {morph_name!r}")
                if field_name not in _MORPHOLOGY_FIELDS:
                    raise ValueError(f"{path}:{lineno}: unknown morphology field {field_name!r}")
                morphologies[morph_name] = replace(
                    morphologies[morph_name], **{field_name: float(value)})
            elif key in _RADIO_FIELDS:
                radio_kwargs[key] = float(value)
            elif key in ("min_distance_m", "tau"):
                scenario_overrides[key] = float(value)
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return morphologies, RadioDefaults(**radio_kwargs), scenario_overrides
