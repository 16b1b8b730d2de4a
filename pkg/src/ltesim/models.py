"""Allen-Cahn, Nagumo and SIS models in homogeneous-Dirichlet working form.

Every model here has working domain ``[-1, 1]``, diffusion
``g(r) = c (1 - r^2)`` and drift ``f(r) = (1 - r^2)(rho0 + rho1 r)``; one
Lamperti kernel (``atanh``/``tanh``) therefore serves all of them.
Coefficients are the plain polynomials on the whole real line, which is what
the explicit baseline schemes see once they leave the domain.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Domain
from .exactsim import LampertiMachine

UNIT = Domain(-1.0, 1.0)
MODEL_NAMES = ("allen-cahn", "nagumo", "sis")
DEFAULT_GAMMA = 0.25


def _identity(u):
    return np.asarray(u, dtype=float) * 1.0


def _center_to_working(u):
    return 2.0 * (np.asarray(u, dtype=float) - 0.5)


def _center_from_working(z):
    return 0.5 + 0.5 * np.asarray(z, dtype=float)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    rho0: float
    rho1: float
    noise_shape_constant: float
    initial_profile: Callable
    to_working: Callable = _identity
    from_working: Callable = _identity
    original_domain: Domain = UNIT
    boundary_value: float = 0.0
    endpoint_sampler: Optional[str] = None
    domain: Domain = UNIT
    params: dict = field(default_factory=dict)

    def f(self, r):
        r = np.asarray(r, dtype=float)
        return (1.0 - r * r) * (self.rho0 + self.rho1 * r)

    def g(self, r):
        r = np.asarray(r, dtype=float)
        return self.noise_shape_constant * (1.0 - r * r)

    def g_prime(self, r):
        return -2.0 * self.noise_shape_constant * np.asarray(r, dtype=float)

    def with_noise_scale(self, lam):
        """Same model with ``g`` multiplied by ``lam``."""
        if lam < 0:
            raise ValueError(f"noise scale must be >= 0, got {lam}")
        return dataclasses.replace(
            self, noise_shape_constant=self.noise_shape_constant * lam,
            params={**self.params, "noise_scale": self.params.get("noise_scale", 1.0) * lam})

    def machine(self, x0, lambda_eff):
        """Lamperti machine for effective multiplier ``lambda_eff`` (in front of ``1 - r^2``)."""
        return LampertiMachine(float(x0), float(lambda_eff), self.rho0, self.rho1)

    def lamperti_factory(self, x0, kappa):
        """Lamperti machine of ``dX = f dt + kappa g dB`` started at ``x0``."""
        return self.machine(x0, kappa * self.noise_shape_constant)

    def flow(self, x, t, steps=64):
        """Noise-free flow ``dx/dt = f(x)`` over time ``t`` (RK4 in ``atanh`` coordinates)."""
        x = np.array(x, dtype=float)
        out = x.copy()
        inside = (x > -1.0) & (x < 1.0)
        z = np.arctanh(x[inside])
        h = t / steps

        def rhs(z):
            return self.rho0 + self.rho1 * np.tanh(z)

        for _ in range(steps):
            k1 = rhs(z)
            k2 = rhs(z + 0.5 * h * k1)
            k3 = rhs(z + 0.5 * h * k2)
            k4 = rhs(z + h * k3)
            z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[inside] = np.tanh(z)
        return out


def allen_cahn():
    return ModelSpec(
        name="allen-cahn", rho0=0.0, rho1=1.0, noise_shape_constant=1.0,
        initial_profile=lambda x: np.sin(2.0 * np.pi * np.asarray(x, dtype=float)),
        endpoint_sampler="rejection",
    )


def nagumo(gamma=DEFAULT_GAMMA):
    if not 0.0 < gamma < 0.5:
        raise ValueError(f"gamma must lie in (0, 1/2), got {gamma}")
    return ModelSpec(
        name="nagumo", rho0=0.25 * (1.0 - 2.0 * gamma), rho1=0.25,
        noise_shape_constant=0.5,
        initial_profile=_half_sine_profile,
        to_working=_center_to_working, from_working=_center_from_working,
        original_domain=Domain(0.0, 1.0), boundary_value=0.5,
        endpoint_sampler="rejection", params={"gamma": gamma},
    )


def sis():
    return ModelSpec(
        name="sis", rho0=0.5, rho1=0.0, noise_shape_constant=0.5,
        initial_profile=_half_sine_profile,
        to_working=_center_to_working, from_working=_center_from_working,
        original_domain=Domain(0.0, 1.0), boundary_value=0.5,
        endpoint_sampler="direct",
    )


def _half_sine_profile(x):
    return 0.5 * (np.sin(np.pi * np.asarray(x, dtype=float)) + 0.5)


def heat_stub():
    """``f = g = 0``: the LTE reaction step is the identity."""
    return ModelSpec(name="heat", rho0=0.0, rho1=0.0, noise_shape_constant=0.0,
                     initial_profile=lambda x: np.sin(np.pi * np.asarray(x, dtype=float)))


def get_model(name, gamma=None):
    key = name.lower().replace("_", "-")
    if key == "allen-cahn":
        return allen_cahn()
    if key == "nagumo":
        return nagumo(DEFAULT_GAMMA if gamma is None else gamma)
    if key == "sis":
        return sis()
    raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")


def evaluate_coefficients(model, r):
    if math.isnan(r):
        raise ValueError("NaN argument")
    return float(model.f(r)), float(model.g(r)), float(model.g_prime(r))
