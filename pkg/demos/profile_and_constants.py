"""Closed-form constants and the model half-plane profile.

Prints the kernel normalization C(n,s), the extension constant d_s, and the
slope constant for a few orders, then tabulates how the conservative residual
of the model profile U(t,z) = ((sqrt(t^2+z^2)+t)/2)^s shrinks under grid
refinement.  U solves the weighted equation div(|z|^a grad U) = 0 away from
{t <= 0, z = 0}, so the residual is pure discretization error.
"""

import numpy as np

from fraclab.constants import FracParams, la_residual, one_plane_solution, slope_constant

print("order s | C(1,s)      d_s         2Lam/d_s    sqrt(Lam)/Gamma(1+s)")
for s in (0.1, 0.25, 0.5, 0.75, 0.9):
    p = FracParams(1, s, 2.0)
    print(f"  {s:4.2f}  | {p.c_ns:10.6f}  {p.d_s:10.6f}  {p.lambda_tilde:10.6f}"
          f"  {slope_constant(2.0, s):10.6f}")

print()
print("profile identities (sampled):")
t = np.linspace(-2, 2, 9)
print("  U(t,0)      =", np.round(one_plane_solution(t, 0.0, 0.5), 6))
print("  max(t,0)^s  =", np.round(np.maximum(t, 0.0) ** 0.5, 6))
z = np.linspace(-2, 2, 9)
print("  U(0,z)      =", np.round(one_plane_solution(0.0, z, 0.5), 6))
print("  (|z|/2)^s   =", np.round((np.abs(z) / 2) ** 0.5, 6))

print()
print("residual refinement (median |div(|z|^a grad U_h)|):")
for s in (0.3, 0.5, 0.7):
    meds = []
    for h in (0.04, 0.02, 0.01):
        tt = -1.0 + h * np.arange(int(round(2.0 / h)) + 1)
        zz = h * (1 + np.arange(int(round(0.5 / h)) + 1))
        U = one_plane_solution(tt[:, None], zz[None, :], s)
        meds.append(np.median(np.abs(la_residual(U, s, h, t0=tt[0], z0=zz[0]))))
    orders = np.log2(np.array(meds[:-1]) / np.array(meds[1:]))
    print(f"  s={s}: medians {['%.3e' % m for m in meds]} "
          f"orders {np.round(orders, 2)}")
