"""Statistical basins of a direct sum.

On [0, 1/2) the system contracts towards 0; on [1/2, 1] it runs an expanding
random map.  Points never cross over, so each half is its own basin.  The
grid sees two ergodic components: the expanding half with its uniform
density, and the contracting half squeezed into the lowest cell.

A Monte Carlo survey starts points uniformly, runs Birkhoff averages along a
random noise realisation and assigns each point to the component whose
density its histogram matches.  Both basins should hold about half the points.
"""

from transferlab import gallery
from transferlab.montecarlo import basin_survey
from transferlab.spectral import ergodic_decomposition
from transferlab.ulam import build_ulam


def main():
    s = gallery.get("direct_sum").system()
    dec = ergodic_decomposition(build_ulam(s, 64))
    for k, c in enumerate(dec.components):
        lo, hi = min(c.support), max(c.support)
        print(f"component {k}: cells {lo}..{hi} ({len(c.support)} cells), period {c.period}")
    rep = basin_survey(s, dec, 2000, seed=0)
    for k, (f, se) in enumerate(zip(rep.fractions, rep.standard_errors)):
        print(f"basin {k}: {f:.3f} +- {se:.3f}")
    print(f"unassigned: {rep.unassigned:.3f}")


if __name__ == "__main__":
    main()
