import json
import math

import numpy as np
import pytest

from canontrace.laurent import (LaurentExpansion, Operand, cauchy_coefficients, consistency_check, kernel_correction,
                                laurent_TR, operand_residue, weighted_trace)
from canontrace.powers import res_a_log_q
from canontrace.spectral import ModelGeometry, build_operator, zeta0
from canontrace.symbols import ClassicalSymbol

EULER = 0.5772156649015329


def test_cauchy_coefficients_of_known_laurent_series():
    theta = 2 * np.pi * (np.arange(64) + 0.5) / 64
    z = 0.1 * np.exp(1j * theta)
    F = 2.0 / z + 3.0 - 0.5 * z + 0.25 * z**2
    c = cauchy_coefficients(F, z, 0.0, -2, 3)
    assert c[-2] == pytest.approx(0, abs=1e-14)
    assert c[-1] == pytest.approx(2.0, abs=1e-14)
    assert c[0] == pytest.approx(3.0, abs=1e-14)
    assert c[1] == pytest.approx(-0.5, abs=1e-12)
    assert c[2] == pytest.approx(0.25, abs=1e-10)


@pytest.mark.parametrize("radius", [0.05, 0.1, 0.2])
def test_inverse_sqrt_laplacian_circle(circle_2pi, radius):
    # TR(Delta^{-1/2} Delta^{-z}) = 2 zeta_R(2z + 1)
    g, op = circle_2pi
    A = Operand.power(-0.5)
    assert operand_residue(A, op) == pytest.approx(2.0, abs=1e-13)
    exp = laurent_TR(A, op, K=2, radius=radius)
    assert exp.pole_order == 1
    assert exp.coefficient(-1) == pytest.approx(1.0, abs=1e-13)
    assert exp.provenance[-1] == "symbolic" and exp.provenance[0] == "hybrid"
    assert exp.finite_part == pytest.approx(2 * EULER, abs=1e-10)
    assert exp.fitted["pole"] == pytest.approx(1.0, abs=1e-10)
    assert abs(exp.fitted["second_order"]) <= 1e-10
    # Stieltjes: 2 zeta_R(2z+1) = 1/z + 2 gamma - 4 gamma_1 z + ...
    assert exp.coefficient(1) == pytest.approx(-4 * -0.0728158454836767, abs=1e-8)


def test_expansion_json_and_evaluate(circle_2pi):
    g, op = circle_2pi
    exp = laurent_TR(Operand.power(-0.5), op, K=3)
    data = json.loads(json.dumps(exp.to_json()))
    assert [c["k"] for c in data["coeffs"]] == [-1, 0, 1, 2, 3]
    assert data["coeffs"][0]["provenance"] == "symbolic"
    assert exp.evaluate(0.05) == pytest.approx(20.0 + 2 * EULER + 0.2912633819 * 0.05, abs=1e-3)


def test_consistency_flat_torus(flat_torus):
    g, op = flat_torus
    rep = consistency_check(Operand.power(-1.0), op)
    assert rep.symbolic == pytest.approx(1 / (4 * np.pi), abs=1e-14)
    assert rep.gap <= 1e-10
    assert rep.second_order <= 1e-10


def test_consistency_curved_torus(curved_torus):
    g, op = curved_torus
    rep = consistency_check(Operand.power(-1.0), op)
    # the pole is a_0 = vol / (4 pi) on both sides
    assert rep.symbolic == pytest.approx(g.volume() / (4 * np.pi), abs=1e-10)
    assert rep.gap <= 1e-6


def test_identity_weighted_trace_vanishes(circle_2pi, flat_torus):
    for g, op in (circle_2pi, flat_torus):
        assert operand_residue(Operand.identity(), op) == 0.0
        assert kernel_correction(Operand.identity(), op) == 1.0
        tr = weighted_trace(Operand.identity(), op)
        assert tr == pytest.approx(zeta0(op) + op.kernel_dim, abs=1e-10)
        assert tr == pytest.approx(0.0, abs=1e-10)


def test_multiplier_weighted_trace_flat_torus(flat_torus):
    g, op = flat_torus
    f = 0.7
    # kernel-excluded fp is -mean f; the projector term restores it
    assert kernel_correction(Operand.multiplier(f), op) == pytest.approx(f)
    assert weighted_trace(Operand.multiplier(f), op) == pytest.approx(0.0, abs=1e-10)


def test_multiplier_weighted_trace_is_local(curved_torus, torus_direction):
    g, op = curved_torus
    f = torus_direction
    tr = weighted_trace(Operand.multiplier(f), op)
    a2 = g.integral_g(f * g.curvature()) / (12 * np.pi)
    assert tr == pytest.approx(a2, abs=1e-6)
    # tr^Q(f) = -(1/q) res(f log Q)
    sym = res_a_log_q(ClassicalSymbol.multiplication(f, 2, lengths=g.lengths), op.symbol())
    assert tr == pytest.approx(-sym / 2, abs=1e-6)


def test_sign_operand_gives_eta():
    op = build_operator("dirac_circle", ModelGeometry.circle(2 * np.pi, 64), twist=0.3)
    assert operand_residue(Operand.sign(), op) == pytest.approx(0.0, abs=1e-14)
    exp = laurent_TR(Operand.sign(), op, K=1)
    assert exp.pole_order == 0
    assert exp.finite_part == pytest.approx(1 - 2 * 0.3, abs=1e-10)
    assert abs(exp.fitted["pole"]) <= 1e-10


def test_operand_errors(circle_2pi):
    g, op = circle_2pi
    with pytest.raises(ValueError):
        laurent_TR("log", op)
    with pytest.raises(ValueError):
        laurent_TR(Operand.sign(), op)
    dirac = build_operator("dirac_circle", ModelGeometry.circle(2 * np.pi, 64))
    with pytest.raises(ValueError):
        laurent_TR(Operand.power(-0.5), dirac)


def test_labels():
    assert Operand.identity().label() == "I"
    assert Operand.power(-0.5).label() == "Q^-0.5"
    assert Operand.multiplier(1.0).label() == "f*I"
    assert Operand.sign().label() == "Q|Q|^-1"


def test_expansion_defaults():
    e = LaurentExpansion(0, {0: 1.5}, {0: "spectral"})
    assert e.finite_part == 1.5 and e.coefficient(3) == 0.0
    assert math.isclose(float(np.real(e.evaluate(0.3))), 1.5)
