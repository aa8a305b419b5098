"""Command-line front end.

Exit codes: 0 success, 2 build or configuration error, 3 unknown gallery
id, 4 hierarchy consistency failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classify as _classify
from . import gallery, montecarlo, spectral
from .errors import SupportViolation, TransferLabError, UnknownId
from .system import load_system
from .ulam import build_ulam, write_matrix

EXIT_OK, EXIT_CONFIG, EXIT_UNKNOWN, EXIT_HIERARCHY = 0, 2, 3, 4
DEFAULT_OUT = "transferlab_out"


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    system_path: str | None = None
    gallery_id: str | None = None
    grid: tuple = ()
    seed: int = 0
    out: Path = Path(DEFAULT_OUT)
    quadrature: int = 8
    samples: int = 2000
    threads: int = 1
    threshold_file: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if list(self.grid) != sorted(set(self.grid)):
            raise ConfigError("grid ladder must be strictly increasing")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def load(self):
        if self.gallery_id is not None:
            return gallery.get(self.gallery_id).system()
        if self.system_path is None:
            raise ConfigError("one of --system or --gallery is required")
        if not Path(self.system_path).is_file():
            raise ConfigError(f"system spec not found: {self.system_path}")
        return load_system(self.system_path)

    def ladder(self, default):
        return tuple(self.grid) if self.grid else tuple(default)


def _grid(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _common(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--system", metavar="PATH", help="system specification (JSON)")
    src.add_argument("--gallery", metavar="ID", help="gallery entry id")
    p.add_argument("--grid", type=_grid, default=(), metavar="N[,N...]", help="resolution ladder")
    p.add_argument("--seed", type=_u64, default=0, metavar="U64")
    p.add_argument("--out", metavar="DIR", default=None,
                   help=f"output directory (default $TRANSFERLAB_OUT or ./{DEFAULT_OUT})")
    p.add_argument("--quadrature", type=int, default=8, metavar="Q")
    p.add_argument("--samples", type=int, default=2000, metavar="S", help="Monte Carlo sample count")
    p.add_argument("--threads", type=int, default=1, metavar="K", help="worker cap; output does not depend on it")
    p.add_argument("--threshold-file", metavar="PATH", help="JSON overrides of probe thresholds")


def build_parser():
    parser = argparse.ArgumentParser(prog="transferlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("operator", "build Ulam matrices and write them in the sparse text format"),
        ("densities", "ergodic decomposition, invariant densities and absorption weights"),
        ("classify", "run the class probes over the resolution ladder"),
        ("basins", "Monte Carlo statistical basins of the ergodic components"),
        ("correlate", "annealed correlation decay per component"),
    ]:
        _common(sub.add_parser(name, help=helptext))
    sub.choices["basins"].add_argument("--n-avg", type=int, default=100_000, help="Birkhoff averaging length")
    sub.choices["basins"].add_argument("--n-burn", type=int, default=1000)
    sub.choices["basins"].add_argument("--assign-threshold", type=float, default=0.2)
    sub.choices["correlate"].add_argument("--n-max", type=int, default=40)
    g = sub.add_parser("gallery", help="list or export gallery entries")
    gsub = g.add_subparsers(dest="gallery_command", required=True)
    gsub.add_parser("list", help="list entry ids")
    ex = gsub.add_parser("export", help="write an entry's system specification")
    ex.add_argument("id")
    ex.add_argument("--out", metavar="PATH", default=None, help="file to write (default stdout)")
    return parser


def _config(args):
    out = args.out or os.environ.get("TRANSFERLAB_OUT") or DEFAULT_OUT
    return RunConfig(
        system_path=args.system,
        gallery_id=args.gallery,
        grid=args.grid,
        seed=args.seed,
        out=Path(out),
        quadrature=args.quadrature,
        samples=args.samples,
        threads=args.threads,
        threshold_file=args.threshold_file,
        extra={k: v for k, v in vars(args).items() if k in ("n_avg", "n_burn", "assign_threshold", "n_max")},
    )


def _dump(obj, path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_operator(cfg):
    system = cfg.load()
    cfg.out.mkdir(parents=True, exist_ok=True)
    written = []
    for N in cfg.ladder((64,)):
        tm = build_ulam(system, N, quadrature=cfg.quadrature)
        path = cfg.out / f"operator_N{N}.ulam"
        write_matrix(tm, path)
        log = {
            "N": N,
            "build_method": tm.build_method,
            "nnz": int(tm.nnz),
            "max_row_defect": float(np.max(tm.row_defect)),
            "flagged_rows": [int(i) for i in tm.flagged_rows],
            "matrix_file": path.name,
        }
        _dump(log, cfg.out / f"operator_N{N}.log.json")
        written.append(log)
    _emit({"operators": written})
    return EXIT_OK


def cmd_densities(cfg):
    system = cfg.load()
    summary = []
    for N in cfg.ladder((64,)):
        tm = build_ulam(system, N, quadrature=cfg.quadrature)
        dec = spectral.ergodic_decomposition(tm.matrix)
        out = cfg.out / f"densities_N{N}"
        report = spectral.decomposition_report(dec, out, K=tm.matrix)
        s = _classify.straube_probe(tm.matrix, (1 / 16,), 2 * N)
        report["N"] = N
        report["straube_alpha_hat"] = s.certificate["alpha_hat"]
        report["resolution_artifact"] = s.verdict == _classify.AGAINST
        if report["resolution_artifact"]:
            report["warning"] = ("Straube evidence is against an invariant density: the components are "
                                 "mass piling up at the grid scale")
            print(f"WARNING: N={N}: {report['warning']}", file=sys.stderr)
        _dump(report, out / "decomposition.json")
        summary.append({"N": N, "r": dec.r, "dir": out.name, "resolution_artifact": report["resolution_artifact"]})
    _emit({"densities": summary})
    return EXIT_OK


def cmd_classify(cfg):
    system = cfg.load()
    overrides = {"ladder": cfg.ladder(_classify.ClassifyConfig.ladder), "seed": cfg.seed,
                 "threads": cfg.threads, "quadrature": cfg.quadrature}
    if cfg.threshold_file:
        ccfg = _classify.ClassifyConfig.from_file(cfg.threshold_file, **overrides)
    else:
        ccfg = _classify.ClassifyConfig(**overrides)
    report = _classify.classify(system, ccfg)
    report.write(cfg.out)
    _emit({"system_id": report.system_id, "ladder": report.ladder, "verdicts": report.verdicts,
           "hierarchy_ok": report.hierarchy_ok, "report": str(cfg.out / "classification.json")})
    if report.missing_resolutions and not report.probes:
        return EXIT_CONFIG
    return EXIT_OK if report.hierarchy_ok else EXIT_HIERARCHY


def cmd_basins(cfg):
    system = cfg.load()
    cfg.out.mkdir(parents=True, exist_ok=True)
    results = []
    for N in cfg.ladder((64,)):
        tm = build_ulam(system, N, quadrature=cfg.quadrature)
        dec = spectral.ergodic_decomposition(tm.matrix)
        rep = montecarlo.basin_survey(
            system, dec, cfg.samples,
            n_burn=cfg.extra.get("n_burn", 1000), n_avg=cfg.extra.get("n_avg", 100_000),
            threshold=cfg.extra.get("assign_threshold", 0.2), seed=cfg.seed, threads=cfg.threads,
        )
        d = dict(rep.to_dict(), N=N, r=dec.r)
        _dump(d, cfg.out / f"basins_N{N}.json")
        with open(cfg.out / f"basins_N{N}.csv", "w") as fh:
            fh.write("component,fraction,standard_error\n")
            for k in range(dec.r):
                se = rep.standard_errors[k] if len(rep.standard_errors) else 0.0
                fh.write(f"{k},{rep.fractions[k]!r},{float(se)!r}\n")
            fh.write(f"unassigned,{rep.unassigned!r},{rep.unassigned_se!r}\n")
        results.append(d)
    _emit({"basins": results})
    return EXIT_OK


def cmd_correlate(cfg):
    system = cfg.load()
    cfg.out.mkdir(parents=True, exist_ok=True)
    n_max = cfg.extra.get("n_max", 40)
    results = []
    for N in cfg.ladder((64,)):
        tm = build_ulam(system, N, quadrature=cfg.quadrature)
        dec = spectral.ergodic_decomposition(tm.matrix)
        x = (np.arange(N) + 0.5) / N
        halves = np.where(x < 0.5, 1.0, -1.0)
        for k, comp in enumerate(dec.components):
            mask = comp.density > 0
            phi = np.where(mask, halves, 0.0)
            try:
                fit = montecarlo.annealed_correlation(tm.matrix, comp.density, phi, halves, n_max)
            except SupportViolation as exc:  # pragma: no cover - mask keeps phi inside supp h
                raise TransferLabError(str(exc)) from exc
            name = f"correlation_N{N}_component{k}.csv"
            _classify._write_curve(cfg.out / name, fit.values)
            results.append({"N": N, "component": k, "C": fit.C, "rho": fit.rho, "r2": fit.r2, "curve": name})
    _dump({"correlations": results}, cfg.out / "correlation.json")
    _emit({"correlations": results})
    return EXIT_OK


def cmd_gallery(args):
    if args.gallery_command == "list":
        for e in gallery.list_gallery():
            tag = " (exploratory)" if e.exploratory else ""
            print(f"{e.id}{tag}")
        return EXIT_OK
    entry = gallery.get(args.id)
    text = entry.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "operator": cmd_operator,
    "densities": cmd_densities,
    "classify": cmd_classify,
    "basins": cmd_basins,
    "correlate": cmd_correlate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gallery":
            return cmd_gallery(args)
        return COMMANDS[args.command](_config(args))
    except UnknownId as exc:
        print(f"error: unknown gallery id {exc.args[0]!r}", file=sys.stderr)
        return EXIT_UNKNOWN
    except (ConfigError, TransferLabError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
