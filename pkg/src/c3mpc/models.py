"""Benchmark linear complementarity systems.

Cart-pole with soft walls
    States ``(cart position, pole angle, cart velocity, pole rate)``; one
    input (cart force); two contact forces, right wall then left wall.  The
    pole is a point mass at ``l_c`` on a massless rod, linearized upright,
    with wall contact at the pole tip (distance ``l_p``).  The tip position
    is ``x1 - l_p x2``.  Each wall is a spring of stiffness ``k``: with gap
    ``g = d -/+ tip``, the complementarity row ``0 <= lam _|_ g + lam / k``
    yields ``lam = k max(0, -g)``.  Explicit Euler with step ``T_s``.

Finger gaiting
    Object height ``o`` and two finger heights ``g1, g2`` (unit masses),
    each with its velocity: ``x = (o, o', g1, g1', g2, g2')``.  Inputs are the
    two finger accelerations and the two normal forces pressing the fingers
    on the object.  Each finger contact has Stewart-Trinkle friction: a slack
    ``gamma`` plus positive/negative tangential components, so
    ``lam = (gamma1, f1+, f1-, gamma2, f2+, f2-)``.  Velocities are updated
    first and positions use the new velocities (semi-implicit); the slip
    rows use next-step velocities, which puts ``h``-scaled terms in ``F``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lcs import LcsModel


@dataclass(frozen=True)
class CartPoleParams:
    m_c: float = 0.978
    m_p: float = 0.411
    l_p: float = 0.6
    l_c: float = 0.4267
    k1: float = 50.0
    k2: float = 50.0
    d: float = 0.35
    T_s: float = 0.01
    g: float = 9.81

    def __post_init__(self):
        for name in ("m_c", "m_p", "l_p", "l_c", "k1", "k2", "d", "T_s", "g"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


CARTPOLE_SIM = CartPoleParams()
CARTPOLE_HW = CartPoleParams(k1=100.0, k2=100.0, d=0.39)


def cartpole_continuous(p: CartPoleParams):
    """Continuous-time linearization ``xdot = Ac x + Bc u + Dc lam``."""
    a_cart = p.g * p.m_p / p.m_c
    a_pole = p.g * (p.m_c + p.m_p) / (p.l_c * p.m_c)
    Ac = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, a_cart, 0.0, 0.0],
            [0.0, a_pole, 0.0, 0.0],
        ]
    )
    Bc = np.array([[0.0], [0.0], [1.0 / p.m_c], [1.0 / (p.l_c * p.m_c)]])
    # unit force at the tip pushing in -x (right wall)
    f_cart = (p.l_p / p.l_c - 1.0) / p.m_c
    f_pole = f_cart / p.l_c + p.l_p / (p.m_p * p.l_c**2)
    Dc = np.array([[0.0, 0.0], [0.0, 0.0], [f_cart, -f_cart], [f_pole, -f_pole]])
    return Ac, Bc, Dc


def cartpole_lcs(p: CartPoleParams = CARTPOLE_SIM) -> LcsModel:
    Ac, Bc, Dc = cartpole_continuous(p)
    h = p.T_s
    E = np.array([[-1.0, p.l_p, 0.0, 0.0], [1.0, -p.l_p, 0.0, 0.0]])
    F = np.diag([1.0 / p.k1, 1.0 / p.k2])
    return LcsModel(
        A=np.eye(4) + h * Ac,
        B=h * Bc,
        D=h * Dc,
        d=np.zeros(4),
        E=E,
        F=F,
        H=np.zeros((2, 1)),
        c=np.array([p.d, p.d]),
    )


@dataclass(frozen=True)
class FingerGaitingParams:
    g: float = 9.81
    mu: float = 1.0
    h: float = 0.1
    g1_limits: tuple = (1.0, 3.0)
    g2_limits: tuple = (3.0, 5.0)

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("friction coefficient must be nonnegative")
        if self.h <= 0:
            raise ValueError("time step must be positive")
        if self.g1_limits[0] > self.g1_limits[1] or self.g2_limits[0] > self.g2_limits[1]:
            raise ValueError("gripper limits must be ordered (lower, upper)")


FINGER_GAITING = FingerGaitingParams()


def finger_gaiting_lcs(p: FingerGaitingParams = FINGER_GAITING) -> LcsModel:
    h, mu, g = p.h, p.mu, p.g
    # velocity update v' = v + h (Bv u + Dv lam + dv)
    Bv = np.array([[0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
    Dv = np.array(
        [
            [0, 1, -1, 0, 1, -1],  # object: friction from both fingers
            [0, -1, 1, 0, 0, 0],  # finger 1: reaction
            [0, 0, 0, 0, -1, 1],  # finger 2: reaction
        ],
        dtype=float,
    )
    dv = np.array([-g, 0.0, 0.0])
    pos, vel = [0, 2, 4], [1, 3, 5]
    A = np.eye(6)
    B = np.zeros((6, 4))
    D = np.zeros((6, 6))
    d = np.zeros(6)
    for j in range(3):
        A[pos[j], vel[j]] = h
        B[vel[j]] = h * Bv[j]
        B[pos[j]] = h * h * Bv[j]
        D[vel[j]] = h * Dv[j]
        D[pos[j]] = h * h * Dv[j]
        d[vel[j]] = h * dv[j]
        d[pos[j]] = h * h * dv[j]

    E = np.zeros((6, 6))
    F = np.zeros((6, 6))
    H = np.zeros((6, 4))
    c = np.zeros(6)
    for f in range(2):
        r0 = 3 * f  # gamma row, then + and - slip rows
        finger = 1 + f
        F[r0, r0 + 1] = F[r0, r0 + 2] = -1.0
        H[r0, 2 + f] = mu
        # relative slip velocity v_o' - v_finger' at the next step
        e_rel = np.zeros(6)
        e_rel[1], e_rel[vel[finger]] = 1.0, -1.0
        rel_lam = Dv[0] - Dv[finger]
        rel_u = Bv[0] - Bv[finger]
        rel_d = dv[0] - dv[finger]
        for sign, row in ((1.0, r0 + 1), (-1.0, r0 + 2)):
            E[row] = sign * e_rel
            F[row] = sign * h * rel_lam
            F[row, r0] += 1.0
            H[row] = sign * h * rel_u
            c[row] = sign * h * rel_d
    return LcsModel(A=A, B=B, D=D, d=d, E=E, F=F, H=H, c=c)


def preset_model(name: str) -> LcsModel:
    """LCS for a named preset: ``cartpole-sim``, ``cartpole-hw`` or ``finger-gaiting``."""
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown model preset {name!r}; choose from {sorted(_PRESETS)}") from None


_PRESETS = {
    "cartpole-sim": lambda: cartpole_lcs(CARTPOLE_SIM),
    "cartpole-hw": lambda: cartpole_lcs(CARTPOLE_HW),
    "finger-gaiting": lambda: finger_gaiting_lcs(FINGER_GAITING),
}
