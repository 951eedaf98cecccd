"""Representative parameter vector: the 11 knobs that generate all rock/fluid tables."""

from __future__ import annotations

from dataclasses import dataclass, fields


# Box bounds for each representative parameter. p_b bounds are dynamic
# (the table pressure range), marked with None and filled per problem.
PARAM_BOUNDS = {
    "c_w": (1e-6, 1e-4),
    "k_vo": (0.8, 1.5),
    "p_b": (None, None),
    "lambda_mmin": (0.9, 0.99),
    "d_lambda1": (0.001, 0.05),
    "d_lambda2": (0.001, 0.05),
    "psi_xmmin": (0.9, 0.99),
    "d_psi_xm1": (0.001, 0.05),
    "d_psi_xm2": (0.001, 0.05),
    "psi_xfmax": (100.0, 2000.0),
    "k_xy": (0.1, 0.6),
}

PARAM_NAMES = tuple(PARAM_BOUNDS)


class ParamsError(ValueError):
    """A representative parameter fell outside its admissible box."""


@dataclass(frozen=True)
class RepresentativeParams:
    """The 11 bounded parameters that generate the rock multiplier tables,
    the scaled oil FVF curve, and the water compressibility.

    Units: pressures MPa, c_w MPa^-1, everything else dimensionless.
    """

    c_w: float
    k_vo: float
    p_b: float
    lambda_mmin: float
    d_lambda1: float
    d_lambda2: float
    psi_xmmin: float
    d_psi_xm1: float
    d_psi_xm2: float
    psi_xfmax: float
    k_xy: float

    def as_vector(self) -> list[float]:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def from_vector(cls, vec) -> "RepresentativeParams":
        names = [f.name for f in fields(cls)]
        if len(vec) != len(names):
            raise ParamsError(f"expected {len(names)} parameters, got {len(vec)}")
        return cls(**{n: float(v) for n, v in zip(names, vec)})

    @classmethod
    def from_dict(cls, d: dict) -> "RepresentativeParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParamsError(f"unknown parameter fields: {sorted(unknown)}")
        missing = names - set(d)
        if missing:
            raise ParamsError(f"missing parameter fields: {sorted(missing)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self, p_min: float, p_max: float) -> None:
        """Raise ParamsError naming the first field outside its bounds."""
        for name, (lo, hi) in PARAM_BOUNDS.items():
            if name == "p_b":
                lo, hi = p_min, p_max
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ParamsError(
                    f"parameter {name}={v!r} outside bounds [{lo}, {hi}]"
                )
