"""Configuration Module
====================

Numerical defaults and file/logging settings for the WDN DAE toolkit.
Values can come from the dataclass defaults, environment variables or a
TOML file whose keys are the lower-case field names.
"""

import os
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import tomlkit
from tomlkit.exceptions import TOMLKitError
from dotenv import load_dotenv

from .error_handler import ConfigError


@dataclass
class Config:
    """Configuration for the WDN DAE toolkit."""

    # Physical constants
    GRAVITY: float = 9.80665
    VISCOSITY: float = 1.004e-6  # m^2/s, water at 20 C

    # Model construction
    INERTANCE_SCALE: float = 1.0  # pumps/valves get median pipe gamma times this
    SPEED_FLOOR: float = 0.05
    EPS_KAPPA: float = 1e-8
    EPS_Q: float = 1e-5
    CLOSURE_REFERENCE: float = 1e3  # s/m^2
    CLOSURE_CAP: float = 1e8

    # Newton / integrator
    NEWTON_TOL: float = 1e-10
    NEWTON_MAX_ITER: int = 50
    MIN_STEP: float = 2.0 ** -20
    EQUILIBRIUM_TOL: float = 1e-9
    LINEARIZATION_TOL: float = 1e-6
    RCOND_THRESHOLD: float = 1e-12
    STEP_RETRIES: int = 4
    TIME_STEP: float = 150.0
    EPS_STEP: float = 300.0
    CONTINUITY_TOL: float = 1e-6

    # Smoothing
    TAU_S: float = 300.0

    # Linear analysis
    N_IE: int = 2000
    PERTURBATION_NORM: float = 1e-3
    H_THETA: float = 1e-4
    CURVATURE_STEP: float = 1e-2
    DELTA_LIST: List[float] = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 5.0, 10.0])
    SINGLE_PARAM_DELTA: float = 0.05
    EPS_LIN: float = 0.1
    MAX_RADIUS: float = float("inf")
    KALMAN_HORIZON: Optional[int] = None  # None means n_z
    ROBUSTNESS_SAMPLES: int = 20
    RANDOM_SEED: int = 2024
    TOP_K: int = 6

    # Authority and demand sweeps
    AUTHORITY_HORIZON: float = 7200.0
    FLOW_SCALE: float = 1.0
    HEAD_SCALE: float = 10.0
    DEMAND_SAMPLE_STEP: float = 1800.0
    DEMAND_RANGE: List[float] = field(default_factory=lambda: [0.2, 0.8])  # m^3/s

    # File Settings
    OUTPUT_DIR: str = "output"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None
    LOG_JSON: bool = False

    # Parallelism
    WORKERS: int = 1

    @classmethod
    def from_env(cls):
        """Load configuration from environment variables."""
        load_dotenv()
        return cls(
            OUTPUT_DIR=os.getenv("WDN_OUTPUT_DIR", "output"),
            LOG_LEVEL=os.getenv("WDN_LOG_LEVEL", "INFO"),
            LOG_FILE=os.getenv("WDN_LOG_FILE") or None,
            LOG_JSON=os.getenv("WDN_LOG_JSON", "false").lower() == "true",
            WORKERS=int(os.getenv("WDN_WORKERS", "1")),
        )

    @classmethod
    def from_file(cls, path: str, base: Optional["Config"] = None):
        """
        Load configuration from a TOML file on top of ``base`` (or the env config).

        Args:
            path: TOML file with lower-case keys such as ``tau_s`` or ``h_theta``
            base: Configuration the file values override

        Returns:
            Config: The merged configuration

        Raises:
            ConfigError: If the file cannot be parsed or holds unknown keys
        """
        config = base or cls.from_env()
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = tomlkit.parse(f.read())
        except (OSError, TOMLKitError) as e:
            raise ConfigError(path, str(e))
        return config.updated(document.unwrap(), source=path)

    def updated(self, values: Dict, source: str = "<dict>"):
        """Return a copy with lower-case ``values`` applied."""
        known = {f.name for f in fields(self)}
        merged = asdict(self)
        for key, value in values.items():
            name = key.upper()
            if name not in known:
                raise ConfigError(source, f"unknown key '{key}'")
            merged[name] = value
        return Config(**merged)

    def to_dict(self) -> Dict:
        """Lower-case mapping, as written to run metadata."""
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, float) and value == float("inf"):
                value = "inf"
            out[key.lower()] = value
        return out
