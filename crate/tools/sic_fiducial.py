#!/usr/bin/env python3
"""Search for a Weyl-Heisenberg covariant SIC fiducial by frame-potential minimization.

Usage: sic_fiducial.py D OUTFILE [--seed S]

Minimizes sum_{(a,b) != (0,0)} |<psi|X^a Z^b|psi>|^4 over unit vectors psi.
The minimum is attained exactly when every overlap equals 1/(d+1), i.e. by
SIC fiducials. The minimizer is polished with Levenberg-Marquardt on the
overlap residuals and written in the plaintext fiducial format read by `sic_inputs`.
"""
import argparse
import sys

import numpy as np
from scipy.optimize import least_squares, minimize


def displacements(d):
    omega = np.exp(2j * np.pi / d)
    x = np.roll(np.eye(d), 1, axis=0)
    z = np.diag(omega ** np.arange(d))
    ops = []
    for a in range(d):
        for b in range(d):
            if a == 0 and b == 0:
                continue
            ops.append(np.linalg.matrix_power(x, a) @ np.linalg.matrix_power(z, b))
    return ops


def unpack(v, d):
    psi = v[:d] + 1j * v[d:]
    return psi / np.linalg.norm(psi)


def potential(v, d, ops):
    psi = unpack(v, d)
    return sum(abs(np.vdot(psi, op @ psi)) ** 4 for op in ops)


def max_deviation(psi, d, ops):
    target = 1.0 / (d + 1)
    return max(abs(abs(np.vdot(psi, op @ psi)) ** 2 - target) for op in ops)


def polish(psi, d, ops):
    target = 1.0 / (d + 1)

    def residuals(v):
        phi = v[:d] + 1j * v[d:]
        r = [abs(np.vdot(phi, op @ phi)) ** 2 - target * np.vdot(phi, phi).real ** 2 for op in ops]
        r.append(np.vdot(phi, phi).real - 1.0)
        return np.array(r)

    v = np.concatenate([psi.real, psi.imag])
    res = least_squares(residuals, v, xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
    return unpack(res.x, d)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("d", type=int)
    ap.add_argument("out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tries", type=int, default=200)
    args = ap.parse_args()
    d = args.d
    ops = displacements(d)
    rng = np.random.default_rng(args.seed)
    best = None
    for _ in range(args.tries):
        v0 = rng.normal(size=2 * d)
        res = minimize(potential, v0, args=(d, ops), method="BFGS",
                       options={"gtol": 1e-14, "maxiter": 20000})
        psi = polish(unpack(res.x, d), d, ops)
        dev = max_deviation(psi, d, ops)
        if best is None or dev < best[0]:
            best = (dev, psi)
        if dev < 1e-12:
            break
    dev, psi = best
    if dev > 1e-10:
        sys.exit(f"no SIC fiducial found for d={d}: max deviation {dev:.3e}")
    with open(args.out, "w") as fh:
        fh.write(f"# Weyl-Heisenberg SIC fiducial, frame-potential minimizer, max overlap deviation {dev:.3e}\n")
        fh.write(f"{d}\n")
        for z in psi:
            fh.write(f"{z.real:.17e} {z.imag:.17e}\n")
    print(f"d={d}: max overlap deviation {dev:.3e}")


if __name__ == "__main__":
    main()
