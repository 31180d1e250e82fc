"""Stress carried along characteristics: relaxation, steady shear, and the exponential oracle."""

import numpy as np

from oldroyd_fsi.algebra import assemble_W, assemble_Wvec, unvec, vec
from oldroyd_fsi.solute import (CallableVelocity, advance_stress_along_path, closed_form_constant_coeff,
                                trace_characteristics)


def linear_flow(L):
    L = np.asarray(L, dtype=float)
    return CallableVelocity(lambda t, x: x @ L.T, lambda t, x: np.broadcast_to(L, x.shape + (2,)))


# with no flow a stress simply decays at rate 2
T0 = np.array([[0.4, 0.1], [0.1, -0.2]])
b = trace_characteristics(linear_flow(np.zeros((2, 2))), np.zeros((1, 2)), 0.0, 1.0, 1e-2)
print("relaxed:", unvec(advance_stress_along_path(vec(T0)[None], b)[0]).round(6).tolist())
print("e^-2 T0:", (np.exp(-2) * T0).round(6).tolist())

# unit shear drives any start to the steady state [[1/2, 1/2], [1/2, 0]]
shear = [[0.0, 1.0], [0.0, 0.0]]
for t_end in (1.0, 3.0, 10.0):
    b = trace_characteristics(linear_flow(shear), np.zeros((1, 2)), 0.0, t_end, 1e-2)
    print(f"shear, t = {t_end:4.1f}:", unvec(advance_stress_along_path(np.zeros((1, 4)), b)[0]).round(8).tolist())

# constant gradients have a matrix-exponential solution; RK4 along the path matches it
rng = np.random.default_rng(7)
L = 0.6 * rng.standard_normal((2, 2))
b = trace_characteristics(linear_flow(L), np.zeros((1, 2)), 0.0, 1.0, 1e-2)
rk = advance_stress_along_path(vec(T0)[None], b)[0]
ex = closed_form_constant_coeff(vec(T0), assemble_W(L), assemble_Wvec(L), 1.0)
print("RK4 vs exponential:", np.max(np.abs(rk - ex)))
