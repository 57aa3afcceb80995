"""Model parameters, scenario documents and admissibility checks.

A scenario is built from a key-value document with the sections ``market``,
``factor1``, ``factor2``, ``prefs`` and the optional ``jumps`` and
``correlation``. Every object here is a frozen dataclass, so a built scenario
can be shared freely between threads.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from robustvol.errors import ScenarioValidationError

logger = logging.getLogger(__name__)

# Document key -> FactorParams attribute
FACTOR_KEYS = {
    "kappa": "kappa",
    "theta": "theta",
    "sigma": "sigma_v",
    "rho": "rho",
    "lambda": "lambda_risk",
    "mu": "mu_risk",
    "v0": "v0",
}
MARKET_KEYS = {"r": "r", "T": "horizon_T"}
PREFS_KEYS = ("gamma", "phi_s1", "phi_s2", "phi_v1", "phi_v2")
JUMP_KEYS = {"j_s": "jump_size", "nu_p": "nu_p", "nu_q": "nu_q"}
SECTIONS = ("market", "factor1", "factor2", "prefs", "jumps", "correlation")
NEGATIVE_PSI_POLICIES = ("clamp", "error")


@dataclass(frozen=True)
class FactorParams:
    """One CIR variance factor together with its risk premia."""

    kappa: float
    theta: float
    sigma_v: float
    rho: float
    lambda_risk: float
    mu_risk: float
    v0: float

    @property
    def rho_bar(self) -> float:
        """Loading of the variance on its own Brownian motion, sqrt(1 - rho^2)."""
        return math.sqrt(max(1.0 - self.rho**2, 0.0))


@dataclass(frozen=True)
class MarketParams:
    r: float
    horizon_T: float


@dataclass(frozen=True)
class AmbiguityPrefs:
    """Risk aversion and the four ambiguity-aversion parameters."""

    gamma: float
    phi_s: tuple[float, float]
    phi_v: tuple[float, float]


@dataclass(frozen=True)
class JumpParams:
    jump_size: float
    nu_p: float
    nu_q: float


@dataclass(frozen=True)
class CorrelationSpec:
    rho_w: float
    enabled: bool = True
    # "clamp" floors a negative psi^U squared at zero, "error" raises
    negative_psi: str = "clamp"


@dataclass(frozen=True)
class ValidationReport:
    """Non-fatal admissibility findings recorded while building a scenario."""

    feller: tuple[bool, bool]
    novikov: tuple[bool, bool]
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    market: MarketParams
    factors: tuple[FactorParams, FactorParams]
    prefs: AmbiguityPrefs
    jumps: JumpParams | None = None
    correlation: CorrelationSpec | None = None
    report: ValidationReport | None = field(default=None, compare=False)

    @property
    def gamma(self) -> float:
        return self.prefs.gamma

    @property
    def horizon(self) -> float:
        return self.market.horizon_T

    @property
    def has_jumps(self) -> bool:
        return self.jumps is not None

    @property
    def is_correlated(self) -> bool:
        return self.correlation is not None and self.correlation.enabled

    @property
    def initial_variances(self) -> tuple[float, float]:
        return (self.factors[0].v0, self.factors[1].v0)

    def with_phi(
        self,
        factor: int,
        phi_s: float | None = None,
        phi_v: float | None = None,
    ) -> "ScenarioConfig":
        """Return a copy with the ambiguity parameters of one factor (0 or 1) replaced."""
        phi_s_pair = list(self.prefs.phi_s)
        phi_v_pair = list(self.prefs.phi_v)
        if phi_s is not None:
            phi_s_pair[factor] = phi_s
        if phi_v is not None:
            phi_v_pair[factor] = phi_v
        prefs = replace(self.prefs, phi_s=tuple(phi_s_pair), phi_v=tuple(phi_v_pair))
        return replace(self, prefs=prefs)

    def swapped(self) -> "ScenarioConfig":
        """Return the scenario with the two factor blocks (and their phis) exchanged."""
        prefs = replace(
            self.prefs,
            phi_s=self.prefs.phi_s[::-1],
            phi_v=self.prefs.phi_v[::-1],
        )
        return replace(self, factors=self.factors[::-1], prefs=prefs)

    def without_jumps(self) -> "ScenarioConfig":
        return replace(self, jumps=None)


def validate_feller(factor: FactorParams) -> bool:
    """
    Check the Feller condition 2 kappa theta >= sigma^2.

    Examples:
        >>> validate_feller(FactorParams(3.5, 0.04, 0.01, -0.3, 2.0, -3.0, 1e-4))
        True
        >>> validate_feller(FactorParams(3.0, 0.01, 0.25, -0.7, 3.0, -3.0, 0.04))
        False
    """
    return 2.0 * factor.kappa * factor.theta >= factor.sigma_v**2


def novikov_margin(scenario: ScenarioConfig) -> tuple[tuple[float, float], ...]:
    """
    Left and right hand sides of the worst-case Novikov bound for each factor.

    The left side is the supremum over the horizon of the squared worst-case
    loading, scaled by sigma^2; the right side is kappa^2.
    """
    gamma = scenario.gamma
    margins = []
    for j, factor in enumerate(scenario.factors):
        phi_s = scenario.prefs.phi_s[j]
        phi_v = scenario.prefs.phi_v[j]
        k_j = (phi_s * factor.lambda_risk / (gamma + phi_s)) ** 2 + (
            phi_v * factor.mu_risk / (gamma + phi_v)
        ) ** 2
        margins.append((k_j * factor.sigma_v**2, factor.kappa**2))
    return tuple(margins)


def validate_novikov(scenario: ScenarioConfig) -> tuple[bool, bool]:
    """Per-factor Novikov admissibility of the worst-case measure."""
    first, second = (lhs <= rhs for lhs, rhs in novikov_margin(scenario))
    return first, second


def _number(section: dict, key: str, path: str) -> float:
    if key not in section:
        raise ScenarioValidationError(path, "missing required field")
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise ScenarioValidationError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ScenarioValidationError(path, f"must be finite, got {value}")
    return value


def _section(document: dict, name: str, keys, *, required: bool = True) -> dict | None:
    section = document.get(name)
    if section is None:
        if required:
            raise ScenarioValidationError(name, "missing required section")
        return None
    if not isinstance(section, dict):
        raise ScenarioValidationError(name, "section must be a mapping")
    unknown = set(section) - set(keys)
    if unknown:
        raise ScenarioValidationError(f"{name}.{sorted(unknown)[0]}", "unknown field")
    return section


def _build_factor(section: dict, index: int) -> FactorParams:
    prefix = f"factors[{index}]"
    values = {attr: _number(section, key, f"{prefix}.{key}") for key, attr in FACTOR_KEYS.items()}
    if values["kappa"] <= 0:
        raise ScenarioValidationError(f"{prefix}.kappa", "must be > 0")
    if values["theta"] <= 0:
        raise ScenarioValidationError(f"{prefix}.theta", "must be > 0")
    if values["sigma_v"] < 0:
        raise ScenarioValidationError(f"{prefix}.sigma", "must be >= 0")
    if abs(values["rho"]) > 1:
        raise ScenarioValidationError(f"{prefix}.rho", "must lie in [-1, 1]")
    if values["v0"] < 0:
        raise ScenarioValidationError(f"{prefix}.v0", "must be >= 0")
    return FactorParams(**values)


def build_scenario(document: dict[str, Any], *, warn: bool = True) -> ScenarioConfig:
    """
    Validate a scenario document and assemble an immutable ScenarioConfig.

    Args:
        document: Mapping with sections market, factor1, factor2, prefs and the
                  optional jumps and correlation sections.
        warn: Log Feller and Novikov findings as warnings (sweeps turn this off).

    Returns:
        ScenarioConfig with a ValidationReport holding Feller and Novikov results

    Raises:
        ScenarioValidationError: If a field is missing, malformed or violates a
            hard invariant. The error's ``path`` names the field, for example
            ``prefs.gamma`` or ``factors[0].rho``.
    """
    if not isinstance(document, dict):
        raise ScenarioValidationError("<root>", "scenario document must be a mapping")
    unknown = set(document) - set(SECTIONS)
    if unknown:
        raise ScenarioValidationError(sorted(unknown)[0], "unknown section")

    market_doc = _section(document, "market", MARKET_KEYS)
    market = MarketParams(
        **{attr: _number(market_doc, key, f"market.{key}") for key, attr in MARKET_KEYS.items()}
    )
    if market.horizon_T <= 0:
        raise ScenarioValidationError("market.T", "must be > 0")

    factors = tuple(
        _build_factor(_section(document, f"factor{j + 1}", FACTOR_KEYS), j) for j in range(2)
    )

    prefs_doc = _section(document, "prefs", PREFS_KEYS)
    prefs_values = {key: _number(prefs_doc, key, f"prefs.{key}") for key in PREFS_KEYS}
    if prefs_values["gamma"] <= 1:
        raise ScenarioValidationError("prefs.gamma", "risk aversion must be > 1")
    for key in PREFS_KEYS[1:]:
        if prefs_values[key] < 0:
            raise ScenarioValidationError(f"prefs.{key}", "ambiguity aversion must be >= 0")
    prefs = AmbiguityPrefs(
        gamma=prefs_values["gamma"],
        phi_s=(prefs_values["phi_s1"], prefs_values["phi_s2"]),
        phi_v=(prefs_values["phi_v1"], prefs_values["phi_v2"]),
    )

    jumps = None
    jumps_doc = _section(document, "jumps", JUMP_KEYS, required=False)
    if jumps_doc is not None:
        jumps = JumpParams(
            **{attr: _number(jumps_doc, key, f"jumps.{key}") for key, attr in JUMP_KEYS.items()}
        )
        if jumps.jump_size <= -1:
            raise ScenarioValidationError("jumps.j_s", "jump size must be > -1")
        if jumps.nu_p < 0:
            raise ScenarioValidationError("jumps.nu_p", "must be >= 0")
        if jumps.nu_q <= 0:
            raise ScenarioValidationError("jumps.nu_q", "must be > 0")

    correlation = None
    correlation_doc = _section(
        document, "correlation", ("rho_w", "negative_psi"), required=False
    )
    if correlation_doc is not None:
        rho_w = _number(correlation_doc, "rho_w", "correlation.rho_w")
        if abs(rho_w) >= 1:
            raise ScenarioValidationError("correlation.rho_w", "must lie in (-1, 1)")
        negative_psi = correlation_doc.get("negative_psi", "clamp")
        if negative_psi not in NEGATIVE_PSI_POLICIES:
            raise ScenarioValidationError(
                "correlation.negative_psi", f"expected one of {list(NEGATIVE_PSI_POLICIES)}"
            )
        correlation = CorrelationSpec(rho_w=rho_w, negative_psi=negative_psi)

    if jumps is not None and correlation is not None:
        raise ScenarioValidationError(
            "correlation", "jumps and correlated factors cannot be combined in one scenario"
        )

    scenario = ScenarioConfig(market, factors, prefs, jumps, correlation)
    report = validation_report(scenario)
    for warning in report.warnings if warn else ():
        logger.warning(warning)
    return replace(scenario, report=report)


def validation_report(scenario: ScenarioConfig) -> ValidationReport:
    """Collect Feller and Novikov results for a scenario."""
    feller = tuple(validate_feller(f) for f in scenario.factors)
    novikov = validate_novikov(scenario)
    warnings = []
    for j, factor in enumerate(scenario.factors):
        if not feller[j]:
            warnings.append(
                f"factor{j + 1} violates the Feller condition: "
                f"2*kappa*theta={2 * factor.kappa * factor.theta:.6g} < "
                f"sigma^2={factor.sigma_v**2:.6g}; simulation uses full truncation"
            )
        if not novikov[j]:
            warnings.append(f"factor{j + 1} fails the Novikov bound for the worst-case measure")
    return ValidationReport(feller=feller, novikov=novikov, warnings=tuple(warnings))


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read a YAML scenario document from disk and build it."""
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ScenarioValidationError(str(path), f"cannot read scenario file: {e}") from e
    except yaml.YAMLError as e:
        raise ScenarioValidationError(str(path), f"invalid YAML: {e}") from e
    logger.info(f"Loaded scenario from {path}")
    return build_scenario(document)


def scenario_to_document(scenario: ScenarioConfig) -> dict[str, Any]:
    """Inverse of build_scenario."""
    document: dict[str, Any] = {
        "market": {key: getattr(scenario.market, attr) for key, attr in MARKET_KEYS.items()},
    }
    for j, factor in enumerate(scenario.factors):
        document[f"factor{j + 1}"] = {
            key: getattr(factor, attr) for key, attr in FACTOR_KEYS.items()
        }
    document["prefs"] = {
        "gamma": scenario.prefs.gamma,
        "phi_s1": scenario.prefs.phi_s[0],
        "phi_s2": scenario.prefs.phi_s[1],
        "phi_v1": scenario.prefs.phi_v[0],
        "phi_v2": scenario.prefs.phi_v[1],
    }
    if scenario.jumps is not None:
        document["jumps"] = {key: getattr(scenario.jumps, attr) for key, attr in JUMP_KEYS.items()}
    if scenario.is_correlated:
        document["correlation"] = {
            "rho_w": scenario.correlation.rho_w,
            "negative_psi": scenario.correlation.negative_psi,
        }
    return document


def scenario_hash(scenario: ScenarioConfig) -> str:
    """Stable SHA-256 of the canonical scenario document."""
    canonical = json.dumps(scenario_to_document(scenario), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# Sweepable scalar names, e.g. phi_s1, kappa2, gamma, r, T, nu_p, rho_w
def scenario_parameter_path(name: str) -> tuple[str, str]:
    """Map a flat parameter name to its (section, key) location in the document."""
    if name in MARKET_KEYS:
        return "market", name
    if name in PREFS_KEYS:
        return "prefs", name
    if name in JUMP_KEYS:
        return "jumps", name
    if name == "rho_w":
        return "correlation", name
    for key in FACTOR_KEYS:
        if name.startswith(key) and name[len(key) :] in ("1", "2"):
            return f"factor{name[-1]}", key
    raise ScenarioValidationError(name, "unknown scenario parameter")


def with_parameters(scenario: ScenarioConfig, **values: float) -> ScenarioConfig:
    """Return a rebuilt, revalidated scenario with flat parameters replaced."""
    document = scenario_to_document(scenario)
    for name, value in values.items():
        section, key = scenario_parameter_path(name)
        document.setdefault(section, {})[key] = float(value)
    return build_scenario(document, warn=False)
