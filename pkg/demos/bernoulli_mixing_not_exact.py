"""Bernoulli convolution: mixing, but not exact.

The random map picks x/2 or x/2 + 1/2 with equal odds.  Lebesgue measure is
stationary and correlations decay, yet the L1 norm of a mean-zero density
never shrinks: each branch maps the whole interval onto one half, so the
positive and negative parts of the density are never overlaid.

The Ulam matrix cannot see this for long.  Projecting onto N cells averages
away sub-cell structure, and after log2(N) steps the matrix path reports
the strong norm as zero.  The exact step-function transfer keeps it at one.
"""

import numpy as np

from transferlab import gallery
from transferlab.classify import mixing_exactness_probe
from transferlab.spectral import ergodic_decomposition
from transferlab.ulam import build_ulam


def main():
    s = gallery.get("bernoulli_convolution").system()
    N = 64
    K = build_ulam(s, N)
    comp = ergodic_decomposition(K).components[0]
    print("max |h - 1| =", float(np.max(np.abs(comp.density - 1.0))))

    m_exact, e_exact = mixing_exactness_probe(K, comp, 30, system=s)
    _, e_matrix = mixing_exactness_probe(K, comp, 30)
    weak = m_exact.curves["weak"]
    exact, matrix = e_exact.curves["strong"], e_matrix.curves["strong"]

    def at(curve, n, fmt):
        # the exact curve stops once the breakpoint budget runs out
        return format(curve[n], fmt) if n < len(curve) else "-"

    print(" n   weak pairing   strong (exact)   strong (matrix)")
    for n in (0, 1, 2, 4, 6, 8, 12, 20, 30):
        print(f"{n:2d}   {at(weak, n, '12.3e'):>12s}   {at(exact, n, '14.6f'):>14s}   "
              f"{at(matrix, n, '15.6f'):>15s}")
    print("mixing:", m_exact.verdict, " exact:", e_exact.verdict)


if __name__ == "__main__":
    main()
