"""Determining systems for symmetries of scalar Ito SDEs dX = f dt + g dW.

Three builders produce lists of symbolic residuals in the generator
components (tau, phi, phitilde): the two-equation classical system, the
four-equation stochastic system, and the two-equation specialization for
deterministic ODEs (g == 0).  A vector field is a symmetry exactly when
every residual vanishes identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .expr import (
    Expr,
    HALF,
    ZERO,
    diff,
    mul,
    simplify,
    to_str,
    variables_of,
)


class DeterminingError(ValueError):
    pass


@dataclass(frozen=True)
class Sde:
    """Scalar Ito SDE with drift f(t, x) and diffusion g(t, x).

    `params` maps declared parameter names to an optional numeric value
    (None = symbolic only).
    """

    drift: Expr
    diffusion: Expr
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, e in (("drift", self.drift), ("diffusion", self.diffusion)):
            extra = variables_of(e) - {"t", "x"}
            if extra:
                raise DeterminingError(
                    f"{name} may only mention variables t and x, got {sorted(extra)}")

    def bound_params(self) -> dict:
        return {k: v for k, v in self.params.items() if v is not None}

    def is_deterministic(self) -> bool:
        return simplify(self.diffusion).is_zero()


@dataclass(frozen=True)
class VectorField:
    """Symmetry generator v = [tau d/dt + phi d/dx]^D + [phitilde d/dx]^S."""

    tau: Expr = ZERO
    phi: Expr = ZERO
    phitilde: Expr = ZERO

    def has_stochastic_part(self) -> bool:
        return not simplify(self.phitilde).is_zero()

    def is_zero(self) -> bool:
        return (simplify(self.tau).is_zero() and simplify(self.phi).is_zero()
                and simplify(self.phitilde).is_zero())

    def time_only_tau(self) -> bool:
        return "x" not in variables_of(self.tau)

    def __str__(self):
        parts = []
        det = []
        if not simplify(self.tau).is_zero():
            det.append(f"{_coef_str(self.tau)}d/dt")
        if not simplify(self.phi).is_zero():
            det.append(f"{_coef_str(self.phi)}d/dx")
        if det:
            parts.append("[" + " + ".join(det) + "]^D")
        if not simplify(self.phitilde).is_zero():
            parts.append(f"[{_coef_str(self.phitilde)}d/dx]^S")
        return " + ".join(parts) if parts else "0"


def _coef_str(e: Expr) -> str:
    e = simplify(e)
    if e.is_one():
        return ""
    s = to_str(e)
    return f"({s}) " if e.kind == "sum" else f"{s} "


@dataclass(frozen=True)
class DeterminingSystem:
    """Symbolic residuals, affine in the listed unknown coefficient symbols."""

    residuals: tuple
    unknowns: tuple = ()
    free_vars: tuple = ("t", "x")
    label: str = ""

    def simplified(self) -> "DeterminingSystem":
        return DeterminingSystem(
            tuple(simplify(r) for r in self.residuals),
            self.unknowns, self.free_vars, self.label)

    def is_identically_zero(self) -> bool:
        return all(simplify(r).is_zero() for r in self.residuals)


def _check_tau(v: VectorField):
    if not v.time_only_tau():
        raise DeterminingError("tau must depend on t only in a determining system")


def classical_system(sde: Sde, v: VectorField) -> DeterminingSystem:
    """Two residuals characterizing classical (deterministic-flow) symmetries.

    R1 = f_t*tau + tau_t*f + f_x*phi - phi_t - phi_x*f - (1/2)*phi_xx*g^2
    R2 = g_t*tau + (1/2)*tau_t*g + g_x*phi - phi_x*g
    """
    _check_tau(v)
    if v.has_stochastic_part():
        raise DeterminingError("classical system requires phitilde == 0")
    f, g = sde.drift, sde.diffusion
    tau, phi = v.tau, v.phi
    r1 = (mul(diff(f, "t"), tau) + mul(diff(tau, "t"), f) + mul(diff(f, "x"), phi)
          - diff(phi, "t") - mul(diff(phi, "x"), f)
          - mul(HALF, diff(diff(phi, "x"), "x"), g, g))
    r2 = (mul(diff(g, "t"), tau) + mul(HALF, diff(tau, "t"), g)
          + mul(diff(g, "x"), phi) - mul(diff(phi, "x"), g))
    return DeterminingSystem((simplify(r1), simplify(r2)), label="classical")


def stochastic_system(sde: Sde, v: VectorField) -> DeterminingSystem:
    """Four residuals characterizing stochastic symmetries.

    (i)   f_t*tau + tau_t*f + f_x*phi + (1/2)*f_xx*phitilde^2
            - phi_t - phi_x*f - (1/2)*phi_xx*g^2
    (ii)  f_x*phitilde - phitilde_t - phitilde_x*f - (1/2)*phitilde_xx*g^2
    (iii) g_t*tau + (1/2)*tau_t*g + g_x*phi + (1/2)*g_xx*phitilde^2 - phi_x*g
    (iv)  g_x*phitilde - phitilde_x*g
    """
    _check_tau(v)
    f, g = sde.drift, sde.diffusion
    tau, phi, pt = v.tau, v.phi, v.phitilde
    r1 = (mul(diff(f, "t"), tau) + mul(diff(tau, "t"), f) + mul(diff(f, "x"), phi)
          + mul(HALF, diff(diff(f, "x"), "x"), pt, pt)
          - diff(phi, "t") - mul(diff(phi, "x"), f)
          - mul(HALF, diff(diff(phi, "x"), "x"), g, g))
    r2 = (mul(diff(f, "x"), pt) - diff(pt, "t") - mul(diff(pt, "x"), f)
          - mul(HALF, diff(diff(pt, "x"), "x"), g, g))
    r3 = (mul(diff(g, "t"), tau) + mul(HALF, diff(tau, "t"), g)
          + mul(diff(g, "x"), phi) + mul(HALF, diff(diff(g, "x"), "x"), pt, pt)
          - mul(diff(phi, "x"), g))
    r4 = mul(diff(g, "x"), pt) - mul(diff(pt, "x"), g)
    return DeterminingSystem(
        tuple(simplify(r) for r in (r1, r2, r3, r4)), label="stochastic")


def deterministic_ode_system(sde: Sde, v: VectorField) -> DeterminingSystem:
    """Stochastic-symmetry residuals specialized to a deterministic ODE (g == 0).

    (i)  f_t*tau + tau_t*f + f_x*phi + (1/2)*f_xx*phitilde^2 - phi_t - phi_x*f
    (ii) f_x*phitilde - phitilde_t - phitilde_x*f
    """
    _check_tau(v)
    if not sde.is_deterministic():
        raise DeterminingError("deterministic-ODE system requires g == 0")
    f = sde.drift
    tau, phi, pt = v.tau, v.phi, v.phitilde
    r1 = (mul(diff(f, "t"), tau) + mul(diff(tau, "t"), f) + mul(diff(f, "x"), phi)
          + mul(HALF, diff(diff(f, "x"), "x"), pt, pt)
          - diff(phi, "t") - mul(diff(phi, "x"), f))
    r2 = mul(diff(f, "x"), pt) - diff(pt, "t") - mul(diff(pt, "x"), f)
    return DeterminingSystem((simplify(r1), simplify(r2)), label="det-ode")


def build_system(sde: Sde, v: VectorField, mode: str) -> DeterminingSystem:
    """Dispatch on mode: 'classical' | 'stochastic' | 'det-ode'."""
    if mode == "classical":
        return classical_system(sde, v)
    if mode == "stochastic":
        return stochastic_system(sde, v)
    if mode == "det-ode":
        return deterministic_ode_system(sde, v)
    raise DeterminingError(f"unknown mode {mode!r}")


# residual indices of the subsystem involving only phitilde, per mode
PHITILDE_ROWS = {"classical": (), "stochastic": (1, 3), "det-ode": (1,)}
