import functools

import numpy as np
import pytest

from opfbound.localopf import solve_local
from opfbound.netcase import load_case
from opfbound.relaxations import DualSdpModel, solve_dual_sdp

SMALL = ("case2", "case4", "case9", "case14", "case30")


@functools.cache
def case(name):
    return load_case(name)


@functools.cache
def local(name):
    return solve_local(case(name))


@functools.cache
def model(name):
    return DualSdpModel(case(name))


@functools.cache
def full_sdp(name):
    return solve_dual_sdp(model(name))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_x(rng, n, spread=0.2):
    vm = 1.0 + spread * rng.uniform(-1, 1, n)
    va = rng.uniform(-0.5, 0.5, n)
    return np.concatenate([vm * np.cos(va), vm * np.sin(va)])


def corrupted_local(name, sigma=0.2):
    """Local solution whose cost block at one generator bus outside the initial problematic set is not PSD.

    Returns ``(solution, bus)``.
    """
    import dataclasses

    from opfbound.fastbound import evaluate_dual_matrix, select_problematic

    c, sol, m = case(name), local(name), model(name)
    ev = evaluate_dual_matrix(m, sol.duals)
    sel = select_problematic(ev.eigens, sigma, m.dec, c, nonpsd=ev.nonpsd())
    c2 = c.bus_limits()["c2"]
    k = next(k for k in range(c.n) if k not in sel.buses and c2[k] > 0)
    d = sol.duals.copy()
    d.R[k, 1, 1] = d.R[k, 0, 1] ** 2 - 1.0
    return dataclasses.replace(sol, duals=d), k
