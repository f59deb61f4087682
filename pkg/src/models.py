"""Built-in benchmark ODE systems with hand-written Jacobians"""

from typing import Callable, Dict, Tuple

import numpy as np

from src.core import FloatArray, OdeSystem
from src.exceptions import UnknownModelError


def _unpack(x: FloatArray) -> Tuple[FloatArray, ...]:
    return tuple(x[:, i] for i in range(x.shape[1]))


class Hes1(OdeSystem):
    """Hes1 oscillator on the raw scale, components (P, M, H).

    dP/dt = -aPH + bM - cP
    dM/dt = -dM + e/(1+P²)
    dH/dt = -aPH + f/(1+P²) - gH
    """

    def __init__(self) -> None:
        """Constructor."""
        super().__init__(
            "hes1", ("P", "M", "H"), ("a", "b", "c", "d", "e", "f", "g"), np.zeros(7), np.full(7, np.inf)
        )

    def f(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        a, b, c, d, e, f, g = theta
        P, M, H = _unpack(x)
        return np.column_stack(
            (-a * P * H + b * M - c * P, -d * M + e / (1 + P**2), -a * P * H + f / (1 + P**2) - g * H)
        )

    def jac_x(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        a, b, c, d, e, f, g = theta
        P, M, H = _unpack(x)
        out = np.zeros((x.shape[0], 3, 3))
        out[:, 0, 0] = -a * H - c
        out[:, 1, 0] = b
        out[:, 2, 0] = -a * P
        out[:, 0, 1] = -2 * e * P / (1 + P**2) ** 2
        out[:, 1, 1] = -d
        out[:, 0, 2] = -a * H - 2 * f * P / (1 + P**2) ** 2
        out[:, 2, 2] = -a * P - g
        return out

    def jac_theta(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        P, M, H = _unpack(x)
        out = np.zeros((x.shape[0], 7, 3))
        out[:, 0, 0] = -P * H
        out[:, 1, 0] = M
        out[:, 2, 0] = -P
        out[:, 3, 1] = -M
        out[:, 4, 1] = 1 / (1 + P**2)
        out[:, 0, 2] = -P * H
        out[:, 5, 2] = 1 / (1 + P**2)
        out[:, 6, 2] = -H
        return out


class Hes1Log(OdeSystem):
    """Hes1 oscillator on the log scale, components (log P, log M, log H); keeps every state positive."""

    def __init__(self) -> None:
        """Constructor."""
        super().__init__(
            "hes1-log", ("P", "M", "H"), ("a", "b", "c", "d", "e", "f", "g"), np.zeros(7), np.full(7, np.inf)
        )

    def f(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        a, b, c, d, e, f, g = theta
        P, M, H = (np.exp(column) for column in _unpack(x))
        return np.column_stack(
            (
                -a * H + b * M / P - c,
                -d + e / ((1 + P**2) * M),
                -a * P + f / ((1 + P**2) * H) - g,
            )
        )

    def jac_x(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        a, b, c, d, e, f, g = theta
        P, M, H = (np.exp(column) for column in _unpack(x))
        out = np.zeros((x.shape[0], 3, 3))
        out[:, 0, 0] = -b * M / P
        out[:, 1, 0] = b * M / P
        out[:, 2, 0] = -a * H
        out[:, 0, 1] = -2 * e * P**2 / ((1 + P**2) ** 2 * M)
        out[:, 1, 1] = -e / ((1 + P**2) * M)
        out[:, 0, 2] = -a * P - 2 * f * P**2 / ((1 + P**2) ** 2 * H)
        out[:, 2, 2] = -f / ((1 + P**2) * H)
        return out

    def jac_theta(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        P, M, H = (np.exp(column) for column in _unpack(x))
        out = np.zeros((x.shape[0], 7, 3))
        out[:, 0, 0] = -H
        out[:, 1, 0] = M / P
        out[:, 2, 0] = -1
        out[:, 3, 1] = -1
        out[:, 4, 1] = 1 / ((1 + P**2) * M)
        out[:, 0, 2] = -P
        out[:, 5, 2] = 1 / ((1 + P**2) * H)
        out[:, 6, 2] = -1
        return out


class FitzHughNagumo(OdeSystem):
    """FitzHugh-Nagumo spike potentials, components (V, R).

    dV/dt = c(V - V³/3 + R)
    dR/dt = -(V - a + bR)/c
    """

    def __init__(self) -> None:
        """Constructor."""
        super().__init__("fn", ("V", "R"), ("a", "b", "c"), np.zeros(3), np.full(3, np.inf))

    def f(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        a, b, c = theta
        V, R = _unpack(x)
        return np.column_stack((c * (V - V**3 / 3 + R), -(V - a + b * R) / c))

    def jac_x(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        a, b, c = theta
        V, _ = _unpack(x)
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = c * (1 - V**2)
        out[:, 1, 0] = c
        out[:, 0, 1] = -1 / c
        out[:, 1, 1] = -b / c
        return out

    def jac_theta(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        a, b, c = theta
        V, R = _unpack(x)
        out = np.zeros((x.shape[0], 3, 2))
        out[:, 2, 0] = V - V**3 / 3 + R
        out[:, 0, 1] = 1 / c
        out[:, 1, 1] = -R / c
        out[:, 2, 1] = (V - a + b * R) / c**2
        return out


class HivTimeDependent(OdeSystem):
    """HIV infection with an oscillating infection rate, components (TU, TI, V).

    dTU/dt = λ - ρTU - η(t)TU·V
    dTI/dt = η(t)TU·V - δTI
    dV/dt  = NδTI - cV
    """

    def __init__(self) -> None:
        """Constructor."""
        super().__init__(
            "hiv-td", ("TU", "TI", "V"), ("lambda", "rho", "delta", "N", "c"), np.zeros(5), np.full(5, np.inf)
        )

    @staticmethod
    def eta(t: FloatArray) -> FloatArray:
        """Infection rate at time t (days)."""
        return 9e-5 * (1 - 0.9 * np.cos(np.pi * np.asarray(t, dtype=float) / 1000))

    def f(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        lam, rho, delta, N, c = theta
        TU, TI, V = _unpack(x)
        infection = self.eta(t) * TU * V
        return np.column_stack((lam - rho * TU - infection, infection - delta * TI, N * delta * TI - c * V))

    def jac_x(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        lam, rho, delta, N, c = theta
        TU, TI, V = _unpack(x)
        eta = self.eta(t)
        out = np.zeros((x.shape[0], 3, 3))
        out[:, 0, 0] = -rho - eta * V
        out[:, 2, 0] = -eta * TU
        out[:, 0, 1] = eta * V
        out[:, 1, 1] = -delta
        out[:, 2, 1] = eta * TU
        out[:, 1, 2] = N * delta
        out[:, 2, 2] = -c
        return out

    def jac_theta(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        lam, rho, delta, N, c = theta
        TU, TI, V = _unpack(x)
        out = np.zeros((x.shape[0], 5, 3))
        out[:, 0, 0] = 1
        out[:, 1, 0] = -TU
        out[:, 2, 1] = -TI
        out[:, 2, 2] = N * TI
        out[:, 3, 2] = delta * TI
        out[:, 4, 2] = -V
        return out


BUILTIN_MODELS: Dict[str, Callable[[], OdeSystem]] = {
    "hes1": Hes1,
    "hes1-log": Hes1Log,
    "fn": FitzHughNagumo,
    "hiv-td": HivTimeDependent,
}


def builtin_model(name: str) -> OdeSystem:
    """Instantiate one of the built-in systems by name."""
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise UnknownModelError(
            f"unknown model '{name}', available models: {', '.join(sorted(BUILTIN_MODELS))}"
        ) from None
