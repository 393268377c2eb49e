"""A priori constants of the damped model and the nudging parameter gates.

Everything here is closed-form arithmetic. Quantities whose hypotheses fail
(alpha <= 1 for the strong-solution constants, a <= 0, mu <= 0 for the
nudged bounds) come back as NaN and are listed in ``BoundReport.inapplicable``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .dynamics import BfedParams

NAN = float("nan")


@dataclass(frozen=True)
class TheoryConstants:
    """Dimensionless functional-inequality constants (no numeric values are known)."""

    kappa0: float = 1.0
    kappa0_tilde: float = 1.0
    kappa1: float = 1.0
    kappa2: float = 1.0
    kappa3: float = 1.0
    kappa4: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{k} must be positive")


def _neg(b: float) -> int:
    return 1 if b < 0 else 0


def eta0(p: BfedParams) -> float:
    nb = _neg(p.b)
    vol = p.box_length ** 3
    out = (2 * (1 + nb) / p.a) ** (1 / p.alpha)
    if nb:
        out += abs(p.b) * (4 * abs(p.b) / p.a) ** ((p.beta + 1) / (p.alpha - p.beta))
    return out * vol


def eta1(p: BfedParams) -> float:
    vol = p.box_length ** 3
    return eta0(p) + 0.5 * p.a * (p.nu / p.a) ** ((p.alpha + 1) / p.alpha) * vol


def eta2(p: BfedParams) -> float:
    if not p.b < 0:
        return 0.0
    vol = p.box_length ** 3
    return abs(p.b) * (2 * abs(p.b) / p.a) ** ((p.beta + 1) / (p.alpha - p.beta)) * vol


def _pumping_bracket(p: BfedParams) -> float:
    if not p.b < 0:
        return 0.0
    num = 4 ** p.beta * (abs(p.b) * (1 + 2 * p.beta)) ** p.alpha
    den = (p.a * (1 + 2 * p.alpha)) ** p.beta
    return (num / den) ** (1 / (p.alpha - p.beta))


def _require_strong(p: BfedParams) -> None:
    if not p.alpha > 1:
        raise ValueError(f"alpha must exceed 1 for the gradient constants (alpha={p.alpha})")
    if not p.a > 0:
        raise ValueError("a must be positive")


def A1(p: BfedParams) -> float:
    _require_strong(p)
    nb = _neg(p.b)
    base = (p.nu ** p.alpha * p.a * (1 + 2 * p.alpha) / (2 * (1 + nb))) ** (1 / (1 - p.alpha))
    return 2 * (base + _pumping_bracket(p))


def A2(p: BfedParams, mu: float) -> float:
    _require_strong(p)
    nb = _neg(p.b)
    base = (p.nu ** p.alpha * p.a * (1 + 2 * p.alpha)
            / (3 ** p.alpha * (1 + nb))) ** (1 / (1 - p.alpha))
    return -mu / 2 + base + _pumping_bracket(p)


def _sqrt(x: float, name: str, flags: list) -> float:
    if math.isnan(x):
        return NAN
    if x < 0:
        flags.append(f"{name}: negative radicand {x:.6g}")
        return NAN
    return math.sqrt(x)


@dataclass(frozen=True)
class GateVerdict:
    """Gate verdicts. ``grad``: modal/volume gate; ``nodal``: nodal gate."""

    mu: float
    h: float
    c0: float
    c1: float
    mu_max_grad: float
    mu_max_nodal: float
    h_max_grad: float
    h_max_nodal: float
    ok_grad: bool
    ok_nodal: bool

    def ok_for(self, kind: str) -> bool:
        return self.ok_nodal if kind == "nodal" else self.ok_grad

    def mu_max_for(self, kind: str) -> float:
        return self.mu_max_nodal if kind == "nodal" else self.mu_max_grad


def check_gates(nu: float, mu: float, h: float, c0: float = 1.0, c1: float = 0.0) -> GateVerdict:
    """Verdicts for 2 mu c0 h^2 <= nu and 15 mu max(c0, sqrt c1) h^2 <= nu."""
    if isinstance(nu, BfedParams):
        nu = nu.nu
    kn = 15 * max(c0, math.sqrt(c1))
    mu_g = nu / (2 * c0 * h * h)
    mu_n = nu / (kn * h * h)
    h_g = math.sqrt(nu / (2 * mu * c0)) if mu > 0 else math.inf
    h_n = math.sqrt(nu / (kn * mu)) if mu > 0 else math.inf
    return GateVerdict(mu, h, c0, c1, mu_g, mu_n, h_g, h_n,
                       2 * mu * c0 * h * h <= nu, kn * mu * h * h <= nu)


def mu_lower_bound_L2(p: BfedParams, K: float,
                      constants: TheoryConstants = TheoryConstants()) -> float:
    """Indicative L^2 convergence threshold on mu (depends on unknown kappas)."""
    out = p.nu / 2 + 2 ** 7 * constants.kappa1 ** 8 * K ** 4 / p.nu ** 3
    if p.b < 0:
        num = (2 * constants.kappa0_tilde * abs(p.b)) ** p.alpha
        den = (p.a * constants.kappa0) ** p.beta
        out += (num / den) ** (1 / (p.alpha - p.beta))
    return 2 * out


@dataclass
class BoundReport:
    eta0: float
    eta1: float
    eta2: float
    A1: float
    A2: float
    rho0: float
    rho1: float
    K1: float
    K2: float
    K: float
    M: float
    P1: float
    P2: float
    P: float
    mu_min_L2: float
    gate: Optional[GateVerdict]
    inputs: dict = field(default_factory=dict)
    inapplicable: list = field(default_factory=list)

    @property
    def gate_grad(self):
        return self.gate.ok_grad if self.gate else None

    @property
    def gate_nodal(self):
        return self.gate.ok_nodal if self.gate else None

    def absorbing_rhs(self, u0_l2_sq: float, t: float) -> float:
        """``||u0||^2 e^{-nu t} + rho0^2``."""
        return u0_l2_sq * math.exp(-self.inputs["nu"] * t) + self.rho0 ** 2

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("eta0", "eta1", "eta2", "A1", "A2", "rho0", "rho1", "K1", "K2", "K", "M",
              "P1", "P2", "P", "mu_min_L2")}
        d["gate"] = asdict(self.gate) if self.gate else None
        d["inputs"] = dict(self.inputs)
        d["inapplicable"] = list(self.inapplicable)
        return d


def compute_bounds(params: BfedParams, f_norm: float, u0_l2: float = 0.0,
                   u0_grad: float = 0.0, v0_l2: float = 0.0, v0_grad: float = 0.0,
                   h: Optional[float] = None, mu: float = 0.0, c0: float = 1.0,
                   c1: float = 0.0,
                   constants: TheoryConstants = TheoryConstants()) -> BoundReport:
    """Evaluate every a priori constant for the given data.

    Norms are passed as plain numbers: ``f_norm = ||f||_2``, ``u0_l2 = ||u0||_2``,
    ``u0_grad = ||grad u0||_2`` and likewise for the nudged initial state.
    """
    p = params
    nu = p.nu
    flags: list = []
    inputs = dict(nu=nu, a=p.a, b=p.b, alpha=p.alpha, beta=p.beta, box_length=p.box_length,
                  f_norm=f_norm, u0_l2=u0_l2, u0_grad=u0_grad, v0_l2=v0_l2,
                  v0_grad=v0_grad, h=h, mu=mu, c0=c0, c1=c1, constants=asdict(constants))
    if not p.a > 0:
        flags.append("a <= 0: damping bounds inapplicable")
        e0 = e1 = e2 = NAN
    else:
        e0, e1, e2 = eta0(p), eta1(p), eta2(p)
    f2 = f_norm ** 2
    rho0 = _sqrt(2 / nu * (f2 + e1), "rho0", flags)

    try:
        a1 = A1(p)
        a2 = A2(p, mu)
    except ValueError as exc:
        flags.append(f"strong-solution constants: {exc}")
        a1 = a2 = NAN
    rho1 = _sqrt((1 / nu) * ((2 + (a1 + 1) * (1 + 1 / nu)) * f2 + (a1 + 1) * (e0 + e1 / nu)),
                 "rho1", flags)
    k1 = _sqrt((1 / nu) * ((2 + a1) * f2 + a1 * e0) + a1 / (2 * nu) * u0_l2 ** 2
               + u0_grad ** 2, "K1", flags)
    k2 = _sqrt(rho1 ** 2 + (1 + a1) / (2 * nu) * u0_l2 ** 2, "K2", flags)
    K = max(k1, k2) if not (math.isnan(k1) or math.isnan(k2)) else NAN

    gate = None
    M = P1 = P2 = P = NAN
    if h is not None:
        gate = check_gates(nu, mu, h, c0, c1)
        sqrt_m = f_norm + mu * math.sqrt(c0) * h * K \
            + mu * math.sqrt(u0_l2 ** 2 + 2 / nu * (f2 + e1))
        M = sqrt_m ** 2
        if mu > 0:
            P1 = _sqrt(a2 / nu * v0_l2 ** 2 + v0_grad ** 2
                       + 2 / nu * (M * (1 + a2 / mu) + a2 * e2), "P1", flags)
            P2 = _sqrt((a2 + 1) / nu * v0_l2 ** 2
                       + 2 / nu * (M + (a2 + 1) * (1 + 1 / mu) * (M / mu + e2)), "P2", flags)
            P = max(P1, P2) if not (math.isnan(P1) or math.isnan(P2)) else NAN
        else:
            flags.append("mu <= 0: nudged gradient bound inapplicable")
    mu_min = mu_lower_bound_L2(p, K, constants) if not math.isnan(K) else NAN
    return BoundReport(e0, e1, e2, a1, a2, rho0, rho1, k1, k2, K, M, P1, P2, P, mu_min,
                       gate, inputs, flags)
