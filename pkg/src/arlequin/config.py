"""Study configuration: strict schema, validation and canonical hashing.

The config is one JSON document with the fixed key schema below; unknown keys
anywhere are hard errors so silent misconfiguration cannot happen.

    {
      "geometry":    {"L": 4.0, "L_c": 2.0, "L_f": 1.0},
      "mesh":        {"H": 0.5, "refine_ratio": 40},
      "coefficient": {"name": "smooth_trig", "params": {"base": 2.0, "amp": 1.0}},
      "eps":         [0.5, 0.25, 0.125],
      "bc_direction": 1,
      "optimizer":   {"mode": "scalar", "init": 1.0, "method": "newton_safeguarded",
                      "bounds": [0.5, 4.0], "tol_grad": 1e-8, "tol_step": 1e-8,
                      "max_evals": 200},
      "oracle_resolutions": [64, 128, 256],
      "output": "out",
      "seed": 0,
      "thresholds": {"max_rel_error": 0.05}
    }

Only "geometry", "mesh", "coefficient" and "eps" are required; everything
else has the defaults shown by ``StudyConfig``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .coefficients import CoefficientField, coefficient_zoo
from .errors import InvalidConfig
from .geometry import DomainSpec

_EPS_TILE_TOL = 1e-9


@dataclass(frozen=True)
class OptimizerConfig:
    mode: str = "scalar"
    init: float = 1.0
    method: str = "newton_safeguarded"
    bounds: tuple[float, float] | None = None
    tol_grad: float = 1e-8
    tol_step: float = 1e-8
    max_evals: int = 200


@dataclass(frozen=True)
class StudyConfig:
    geometry: DomainSpec
    H: float
    refine_ratio: int
    coefficient_name: str
    coefficient_params: dict
    eps_values: tuple[float, ...]
    bc_direction: int = 1
    optimizer: OptimizerConfig = dc_field(default_factory=OptimizerConfig)
    oracle_resolutions: tuple[int, ...] = (64, 128, 256)
    output: str = "out"
    seed: int = 0
    thresholds: dict = dc_field(default_factory=dict)

    @property
    def h(self) -> float:
        return self.H / self.refine_ratio

    def field(self) -> CoefficientField:
        return coefficient_zoo(self.coefficient_name, **self.coefficient_params)

    def under_resolved(self, eps: float) -> bool:
        """Flag rows whose fine mesh does not resolve the oscillation (h > eps/10)."""
        return self.h > eps / 10.0 + 1e-12

    def canonical_dict(self) -> dict:
        return {
            "geometry": {"L": self.geometry.L, "L_c": self.geometry.L_c, "L_f": self.geometry.L_f},
            "mesh": {"H": self.H, "refine_ratio": self.refine_ratio},
            "coefficient": {"name": self.coefficient_name,
                            "params": dict(sorted(self.coefficient_params.items()))},
            "eps": list(self.eps_values),
            "bc_direction": self.bc_direction,
            "optimizer": {
                "mode": self.optimizer.mode, "init": self.optimizer.init,
                "method": self.optimizer.method,
                "bounds": list(self.optimizer.bounds) if self.optimizer.bounds else None,
                "tol_grad": self.optimizer.tol_grad, "tol_step": self.optimizer.tol_step,
                "max_evals": self.optimizer.max_evals,
            },
            "oracle_resolutions": list(self.oracle_resolutions),
            "output": self.output,
            "seed": self.seed,
            "thresholds": dict(sorted(self.thresholds.items())),
        }

    def config_hash(self) -> str:
        payload = json.dumps(self.canonical_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _require_keys(d: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise InvalidConfig(f"unknown key(s) in {where}: {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise InvalidConfig(f"missing key(s) in {where}: {sorted(missing)}")


def parse_config(data: dict) -> StudyConfig:
    """Validate a raw config dict against the strict schema."""
    if not isinstance(data, dict):
        raise InvalidConfig("config root must be a JSON object")
    _require_keys(
        data,
        allowed={"geometry", "mesh", "coefficient", "eps", "bc_direction", "optimizer",
                 "oracle_resolutions", "output", "seed", "thresholds"},
        required={"geometry", "mesh", "coefficient", "eps"},
        where="config root",
    )

    g = data["geometry"]
    _require_keys(g, {"L", "L_c", "L_f"}, {"L", "L_c", "L_f"}, "geometry")
    try:
        spec = DomainSpec(float(g["L"]), float(g["L_c"]), float(g["L_f"]))
    except Exception as exc:
        raise InvalidConfig(f"bad geometry: {exc}") from exc

    msh = data["mesh"]
    _require_keys(msh, {"H", "refine_ratio"}, {"H", "refine_ratio"}, "mesh")
    H = float(msh["H"])
    ratio = msh["refine_ratio"]
    if not isinstance(ratio, int) or ratio < 2:
        raise InvalidConfig(f"mesh.refine_ratio must be an integer >= 2, got {ratio!r}")

    coef = data["coefficient"]
    _require_keys(coef, {"name", "params"}, {"name"}, "coefficient")
    name = coef["name"]
    params = coef.get("params", {})
    if not isinstance(params, dict):
        raise InvalidConfig("coefficient.params must be an object")
    try:
        coefficient_zoo(name, **params)
    except Exception as exc:
        raise InvalidConfig(f"bad coefficient: {exc}") from exc

    eps_values = data["eps"]
    if not isinstance(eps_values, list) or not eps_values:
        raise InvalidConfig("eps must be a non-empty list")
    eps_values = tuple(float(e) for e in eps_values)
    for e in eps_values:
        if e <= 0:
            raise InvalidConfig(f"eps values must be positive, got {e}")
        tile = spec.L_f / e
        if abs(tile - round(tile)) > _EPS_TILE_TOL * max(1.0, tile):
            raise InvalidConfig(
                f"eps={e} does not tile the geometry: L_f/eps = {tile} is not an integer"
            )

    bc = data.get("bc_direction", 1)
    if bc not in (1, 2):
        raise InvalidConfig(f"bc_direction must be 1 or 2, got {bc!r}")

    opt_raw = data.get("optimizer", {})
    _require_keys(
        opt_raw,
        {"mode", "init", "method", "bounds", "tol_grad", "tol_step", "max_evals"},
        set(),
        "optimizer",
    )
    mode = opt_raw.get("mode", "scalar")
    if mode not in ("scalar", "matrix"):
        raise InvalidConfig(f"optimizer.mode must be scalar or matrix, got {mode!r}")
    method = opt_raw.get("method", "newton_safeguarded")
    if method not in ("newton_safeguarded", "brent"):
        raise InvalidConfig(f"optimizer.method must be newton_safeguarded or brent")
    bounds = opt_raw.get("bounds")
    if bounds is not None:
        if not (isinstance(bounds, list) and len(bounds) == 2):
            raise InvalidConfig("optimizer.bounds must be [c_minus, c_plus]")
        bounds = (float(bounds[0]), float(bounds[1]))
        if not (0 < bounds[0] < bounds[1]):
            raise InvalidConfig(f"optimizer.bounds must satisfy 0 < c- < c+, got {bounds}")
    if mode == "matrix" and bounds is None:
        raise InvalidConfig("matrix mode requires optimizer.bounds")
    optimizer = OptimizerConfig(
        mode=mode,
        init=float(opt_raw.get("init", 1.0)),
        method=method,
        bounds=bounds,
        tol_grad=float(opt_raw.get("tol_grad", 1e-8)),
        tol_step=float(opt_raw.get("tol_step", 1e-8)),
        max_evals=int(opt_raw.get("max_evals", 200)),
    )
    if optimizer.init <= 0:
        raise InvalidConfig(f"optimizer.init must be positive, got {optimizer.init}")

    res = data.get("oracle_resolutions", [64, 128, 256])
    if not (isinstance(res, list) and all(isinstance(n, int) and n >= 8 and n % 2 == 0 for n in res)):
        raise InvalidConfig("oracle_resolutions must be a list of even integers >= 8")

    thresholds = data.get("thresholds", {})
    _require_keys(thresholds, {"max_rel_error", "max_final_J"}, set(), "thresholds")

    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise InvalidConfig(f"seed must be an integer, got {seed!r}")

    return StudyConfig(
        geometry=spec,
        H=H,
        refine_ratio=ratio,
        coefficient_name=name,
        coefficient_params=dict(params),
        eps_values=eps_values,
        bc_direction=bc,
        optimizer=optimizer,
        oracle_resolutions=tuple(res),
        output=str(data.get("output", "out")),
        seed=seed,
        thresholds=dict(thresholds),
    )


def load_config(path: str | Path) -> StudyConfig:
    """Read and validate a JSON study configuration."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw)
