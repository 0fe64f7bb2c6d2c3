import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nsrhc.fem import Rect, boundary_values, build_actuator_layout, build_actuators, build_space  # noqa: E402
from nsrhc.flow import FomModel, discretize, solve_stationary_reference  # noqa: E402
from nsrhc.mesh import generate_disc_with_hole, generate_rectangle  # noqa: E402


class Problem:
    """A small assembled problem: space, matrices, reference and actuators."""

    def __init__(self, mesh, labels, bc, nu, dt, layout):
        self.mesh = mesh
        self.space = build_space(mesh, labels)
        self.disc = discretize(self.space)
        self.lift = boundary_values(self.space, bc)
        self.nu, self.dt = nu, dt
        self.yhat, self.phat = solve_stationary_reference(self.disc, self.lift, nu, 1e-12)
        self.acts = build_actuator_layout(self.space, layout)
        self.model = FomModel(self.disc, nu, dt, self.acts.B, self.yhat)

    def free_vector(self, rng, scale=1.0):
        v = np.zeros(self.space.n_v)
        free = self.space.free_dofs
        v[free] = scale * rng.standard_normal(free.size)
        return v


def rotating_square(n=4, nu=0.05, dt=0.02):
    """Unit square with rotating wall data and a 2 x 2 actuator grid."""
    mesh = generate_rectangle(0.0, 1.0, 0.0, 1.0, n, n)
    return Problem(
        mesh, {"walls"}, {"walls": lambda x, y: (y - 0.5, 0.5 - x)}, nu, dt,
        [(Rect(0.25, 0.75, 0.25, 0.75), 2, 2)],
    )


def coarse_disc(h=0.25, nu=0.01, dt=0.0125):
    """Example-1 geometry on a coarse mesh with the square-frame actuators."""
    mesh = generate_disc_with_hole(1.0, 0.25, h)
    layout = [
        (Rect(-0.5, 0.5, 0.25, 0.5), 8, 2),
        (Rect(-0.5, 0.5, -0.5, -0.25), 8, 2),
        (Rect(-0.5, -0.25, -0.25, 0.25), 2, 4),
        (Rect(0.25, 0.5, -0.25, 0.25), 2, 4),
    ]
    return Problem(mesh, {"disc", "rect"}, {"disc": lambda x, y: (y, -x)}, nu, dt, layout)


@pytest.fixture(scope="session")
def square():
    return rotating_square()


@pytest.fixture(scope="session")
def tiny_square():
    """At most 60 velocity dofs."""
    return rotating_square(n=2)


@pytest.fixture(scope="session")
def disc():
    return coarse_disc()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


__all__ = ["Problem", "rotating_square", "coarse_disc", "build_actuators"]


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[k])
