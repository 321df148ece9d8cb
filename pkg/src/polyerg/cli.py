"""Command-line front end.

Every command reads a polygon file (JSON with a ``vertices`` list) or report
files and writes a JSON report that embeds the full run configuration, its
hash and the library versions.  Reports are written with sorted keys and no
timestamps, so a fixed configuration and seed give byte-identical output.

Exit codes: 0 success, 2 certificate failed or no correspondence (the
report is still written), 3 input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import NotExpanding, PolyergError

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 2, 3
ENV_THREADS = "POLYERG_THREADS"


@dataclass
class RunConfig:
    """All knobs of one run.  Defaults match the module defaults."""

    command: str = ""
    polygon: Optional[str] = None
    law: str = "slap"
    n_bins: int = 2 ** 14
    grid: tuple = (64, 64)
    n_transient: int = 10_000
    n_sample: int = 100_000
    cluster_tol: float = 0.5
    srb_bins: int = 1024
    eps_singular: float = 1e-11
    depth: int = 50
    max_m: int = 4
    min_m: int = 1
    resolution: int = 512
    s_samples: int = 128
    match_tol: float = 0.1
    seed: int = 0
    inputs: list = field(default_factory=list)
    out: Optional[str] = None

    def to_json(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in data.items() if k in names}
        if "grid" in kw:
            kw["grid"] = tuple(kw["grid"])
        return cls(**kw)

    def digest(self, polygon_hash: Optional[str] = None) -> str:
        """Hash of the knobs (output path excluded) and the polygon content."""
        d = self.to_json()
        d.pop("out")
        d["polygon_hash"] = polygon_hash
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def versions() -> dict:
    import numba
    import scipy

    return {"polyerg": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def _clean(x):
    """JSON-safe copy: tuples to lists, numpy scalars to Python, NaN/inf to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n"


def envelope(kind: str, config: RunConfig, result: dict, status: str = "ok",
             polygon_hash: Optional[str] = None) -> dict:
    return {"kind": kind, "status": status, "config": config.to_json(),
            "config_hash": config.digest(polygon_hash), "polygon_hash": polygon_hash,
            "versions": versions(), "result": result}


def emit(doc: dict, out: Optional[str]):
    text = dumps(doc)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def load_report(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "result" not in doc or "kind" not in doc:
        raise ValueError(f"{path} is not a polyerg report")
    return doc


# ------------------------------------------------------------ commands

def _polygon(config: RunConfig):
    from .geometry import load_polygon

    if not config.polygon:
        raise ValueError("a polygon file is required")
    return load_polygon(config.polygon)


def cmd_slap(config: RunConfig, branches: Optional[str] = None):
    """Ergodic decomposition of the slap map; returns (document, exit code).
    With ``branches`` the branch table is also written there as CSV."""
    from .pwexp import ergodic_decomposition
    from .slapmap import slap_map

    P = _polygon(config)
    psi = slap_map(P)
    if branches:
        psi.write_csv(branches)
    try:
        rep = ergodic_decomposition(psi, config.n_bins)
    except NotExpanding as exc:
        result = {"k": 0, "diagnostic": "NotExpanding", "message": str(exc),
                  "slap_map": psi.to_json()}
        return envelope("slap", config, result, "not_expanding", P.content_hash), EXIT_FAILED
    result = rep.to_json()
    result["slap_map"] = psi.to_json()
    return envelope("slap", config, result, "ok", P.content_hash), EXIT_OK


def cmd_srb(config: RunConfig):
    from .billiard import ReflectionLaw
    from .srb import find_attractors

    P = _polygon(config)
    f = ReflectionLaw.parse(config.law)
    rep = find_attractors(P, f, tuple(config.grid), config.n_transient, config.n_sample,
                          config.cluster_tol, config.seed, config.srb_bins, config.eps_singular)
    return envelope("srb", config, rep.to_json(), "ok", P.content_hash), EXIT_OK


def cmd_certify(config: RunConfig):
    """Hyperbolicity certificate plus the generic-class test."""
    from .billiard import CertificateFailed, ReflectionLaw, hyperbolicity_certificate
    from .errors import FacingParallelSides
    from .slapmap import in_hat_Pd

    P = _polygon(config)
    f = ReflectionLaw.parse(config.law)
    hat = in_hat_Pd(P, config.depth)
    result = {"hat": hat.to_json(), "in_hat_Pd": hat.passed}
    try:
        cert = hyperbolicity_certificate(P, f, config.max_m, config.resolution, config.s_samples,
                                         min_m=config.min_m)
        result["hyperbolicity"] = cert.to_json()
        hyp = True
    except FacingParallelSides as exc:
        result["hyperbolicity"] = {"failure": "expanding", "message": str(exc)}
        hyp = False
    except CertificateFailed as exc:
        result["hyperbolicity"] = {"failure": "certificate", "message": str(exc),
                                   "history": exc.history}
        hyp = False
    if not hat.expanding:
        status = "fail-expanding"
    elif not hat.no_ovc:
        status = "fail-ovc"
    elif not hat.no_preper:
        status = "fail-preperiodic"
    elif not hyp:
        status = "fail-hyperbolicity"
    else:
        status = "pass"
    result["passed"] = status == "pass"
    code = EXIT_OK if status == "pass" else EXIT_FAILED
    return envelope("certificate", config, result, status, P.content_hash), code


def cmd_compare(config: RunConfig):
    """Bijection table between a slap report and an SRB report."""
    from .srb import theta_correspondence

    if len(config.inputs) != 2:
        raise ValueError("compare needs a slap report and an SRB report")
    slap_doc, srb_doc = (load_report(p) for p in config.inputs)
    if slap_doc["kind"] != "slap" or srb_doc["kind"] != "srb":
        raise ValueError("compare expects a slap report followed by an SRB report")
    mismatch = slap_doc.get("polygon_hash") != srb_doc.get("polygon_hash")
    corr = theta_correspondence(slap_doc["result"], srb_doc["result"], config.match_tol)
    result = corr.to_json()
    result["same_polygon"] = not mismatch
    ok = corr.bijection and not mismatch
    code = EXIT_OK if ok else EXIT_FAILED
    return envelope("comparison", config, result, "bijection" if ok else "mismatch",
                    slap_doc.get("polygon_hash")), code


def cmd_corpus(args) -> dict:
    """Build a corpus polygon and return its JSON."""
    from . import corpus as C

    name = args.family
    for flag in ("d", "alpha", "n"):
        if getattr(args, flag, None) is not None:
            args.params = [getattr(args, flag)] + list(args.params)
    if name == "regular":
        P = C.regular_polygon(int(args.params[0]))
    elif name == "triangle":
        P = C.triangle(angles=[float(a) for a in args.params], degrees=args.degrees)
    elif name == "kite":
        P = C.witness_kite() if not args.params else C.kite(*map(float, args.params))
    elif name == "chamber":
        alpha = float(args.params[0])
        alpha = math.radians(alpha) if args.degrees else alpha
        ch = C.chamber(alpha)
        if ch.pentagon is None:
            raise ValueError("a right-angle chamber has no pentagon; use alpha > pi/2")
        P = ch.pentagon
    elif name == "separated":
        vals = [float(a) for a in args.params]
        if len(vals) % 2:
            raise ValueError("separated takes alpha/top pairs")
        P = C.separated_chambers(vals[0::2], vals[1::2]).polygon
    elif name == "tower":
        P = C.chamber_tower(int(args.params[0])).polygon
    else:
        raise ValueError(f"unknown family {name!r}")
    return P.to_json()


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def cmd_plotdata(config: RunConfig, singular_depth: int = 0) -> list:
    """CSV bundles for a report: densities (slap), histograms (srb) and,
    with ``singular_depth``, samples of the singular curves.  Returns the
    written paths."""
    out = Path(config.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in config.inputs:
        doc = load_report(path)
        stem = Path(path).stem
        res = doc["result"]
        if doc["kind"] == "slap":
            for i, a in enumerate(res.get("acips", [])):
                n = a["density_bins"]
                p = out / f"{stem}_density_{i}.csv"
                _write_csv(p, ["bin", "s_lo", "s_hi", "density"],
                           ((b, b / n, (b + 1) / n, v) for b, v in enumerate(a["density"])))
                written.append(p)
        elif doc["kind"] == "srb":
            for i, c in enumerate(res["clusters"]):
                h = np.asarray(c["measure"]["hist"])
                tm = c["measure"]["theta_max"]
                ns, nt = h.shape
                p = out / f"{stem}_hist_{i}.csv"
                _write_csv(p, ["s_bin", "theta_bin", "s_mid", "theta_mid", "mass"],
                           ((a, b, (a + 0.5) / ns, -tm + 2 * tm * (b + 0.5) / nt, h[a, b])
                            for a in range(ns) for b in range(nt)))
                written.append(p)
        else:
            raise ValueError(f"no plot data for a {doc['kind']} report")
    if singular_depth > 0:
        from .billiard import ReflectionLaw, singular_set

        P = _polygon(config)
        S = singular_set(P, ReflectionLaw.parse(config.law), singular_depth,
                         config.resolution, config.s_samples)
        rows = []
        for cid, key in enumerate(sorted(S.curves, key=repr)):
            c = S.curves[key]
            lift = c[0, 0] + np.concatenate([[0.0], np.cumsum((np.diff(c[:, 0]) + 0.5) % 1.0 - 0.5)])
            rows.extend((cid, s, l, th) for (s, th), l in zip(c, lift))
        p = out / f"singular_{singular_depth}.csv"
        _write_csv(p, ["curve", "s", "s_lift", "theta"], rows)
        written.append(p)
    return written


def cmd_billiard(config: RunConfig, s: float, theta: float, n: int):
    """One orbit of the contracted billiard map; returns the Orbit."""
    from .billiard import ReflectionLaw, orbit
    from .geometry import PhasePoint

    P = _polygon(config)
    return orbit(P, ReflectionLaw.parse(config.law), PhasePoint(s, theta), n)


def write_orbit(orb, out: Optional[str]):
    rows = zip(orb.s, orb.theta, orb.t, orb.side)
    if out:
        _write_csv(out, ["s", "theta", "t", "side_index"], rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["s", "theta", "t", "side_index"])
        w.writerows(rows)


# ------------------------------------------------------------ argparse

def _count(text) -> int:
    """Integer that may be written as a float, e.g. ``1e5``."""
    v = float(text)
    if v != int(v) or v < 0:
        raise argparse.ArgumentTypeError(f"{text!r} is not a count")
    return int(v)


def _grid(values) -> tuple:
    """``64x64``, ``64 64`` or ``64`` (square)."""
    parts = [q for v in values for q in str(v).lower().split("x") if q]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"bad grid {' '.join(map(str, values))!r}")
    return tuple(_count(q) for q in parts)


def _common(p, law=True):
    p.add_argument("polygon_file", nargs="?", help="polygon JSON file with a 'vertices' list")
    p.add_argument("--polygon", help="same as the positional polygon file")
    if law:
        p.add_argument("--law", default="slap",
                       help="reflection law: 'slap', 'specular' or 'sigma:<value>'")
        p.add_argument("--sigma", type=float, help="linear law with this sigma (overrides --law)")
    p.add_argument("--out", "-o", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polyerg",
                                 description="Polygonal billiards with contracting reflection laws.")
    ap.add_argument("--version", action="version", version=f"polyerg {__version__}")
    ap.add_argument("--threads", type=int, default=None,
                    help=f"cap on worker threads (default: ${ENV_THREADS} or all cores)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("slap", help="acips of the slap map (Ulam + exact interval dynamics)")
    _common(p, law=False)
    p.add_argument("--n-bins", type=int, default=RunConfig.n_bins)
    p.add_argument("--report", dest="out", help="same as --out")
    p.add_argument("--branches", help="also write the branch table CSV here")

    p = sub.add_parser("srb", help="empirical SRB measures of the contracted billiard map")
    _common(p)
    p.add_argument("--grid", nargs="+", default=["64x64"],
                   help="initial-condition lattice, NSxNTHETA (default 64x64)")
    p.add_argument("--transient", type=_count, default=RunConfig.n_transient)
    p.add_argument("--samples", type=_count, default=RunConfig.n_sample)
    p.add_argument("--cluster-tol", type=float, default=RunConfig.cluster_tol)
    p.add_argument("--bins", type=int, default=RunConfig.srb_bins,
                   help="arclength bins of the marginals")
    p.add_argument("--eps-singular", type=float, default=RunConfig.eps_singular)
    p.add_argument("--seed", type=int, default=RunConfig.seed)

    p = sub.add_parser("certify", help="hyperbolicity certificate and generic-class test")
    _common(p)
    p.add_argument("--depth", type=int, default=RunConfig.depth)
    p.add_argument("--max-m", type=int, default=RunConfig.max_m)
    p.add_argument("--min-m", type=int, default=RunConfig.min_m)
    p.add_argument("--resolution", type=int, default=RunConfig.resolution)
    p.add_argument("--s-samples", type=int, default=RunConfig.s_samples)

    p = sub.add_parser("compare", help="match SRB clusters to slap acips")
    p.add_argument("slap_file", nargs="?")
    p.add_argument("srb_file", nargs="?")
    p.add_argument("--slap", dest="slap_report", help="slap report (or first positional)")
    p.add_argument("--srb", dest="srb_report", help="SRB report (or second positional)")
    p.add_argument("--match-tol", type=float, default=RunConfig.match_tol)
    p.add_argument("--out", "-o")

    p = sub.add_parser("corpus", help="write a corpus polygon")
    p.add_argument("family", choices=["regular", "triangle", "kite", "chamber", "separated", "tower"])
    p.add_argument("params", nargs="*",
                   help="regular: d; triangle: three angles; kite: [half_angle ratio]; "
                        "chamber: alpha; separated: alpha top pairs; tower: n")
    p.add_argument("--d", type=int, help="regular: number of sides")
    p.add_argument("--alpha", type=float, help="chamber: chamber angle")
    p.add_argument("--n", type=int, help="tower: number of chambers")
    p.add_argument("--degrees", action="store_true")
    p.add_argument("--out", "-o")

    p = sub.add_parser("plotdata", help="CSV bundles from reports")
    p.add_argument("reports", nargs="*")
    p.add_argument("--out", "-o", default=".", help="output directory")
    p.add_argument("--singular", type=int, default=0, metavar="N",
                   help="also sample the singular curves of depth N (needs --polygon)")
    p.add_argument("--polygon")
    p.add_argument("--law", default="sigma:0.1")
    p.add_argument("--resolution", type=int, default=RunConfig.resolution)
    p.add_argument("--s-samples", type=int, default=RunConfig.s_samples)

    p = sub.add_parser("billiard", help="one orbit of the contracted billiard map, as CSV")
    _common(p)
    p.add_argument("--orbit", required=True, metavar="S0,THETA0", help="initial point")
    p.add_argument("--steps", type=int, default=100)
    return ap


def config_from_args(args) -> RunConfig:
    c = RunConfig(command=args.command, out=getattr(args, "out", None))
    c.polygon = getattr(args, "polygon", None) or getattr(args, "polygon_file", None)
    for name, attr in (("law", "law"), ("n_bins", "n_bins"),
                       ("n_transient", "transient"), ("n_sample", "samples"),
                       ("cluster_tol", "cluster_tol"), ("srb_bins", "bins"),
                       ("eps_singular", "eps_singular"), ("seed", "seed"), ("depth", "depth"),
                       ("max_m", "max_m"), ("min_m", "min_m"), ("resolution", "resolution"),
                       ("s_samples", "s_samples"), ("match_tol", "match_tol")):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(c, name, v)
    if getattr(args, "sigma", None) is not None:
        c.law = f"sigma:{args.sigma!r}"
    if getattr(args, "grid", None) is not None:
        c.grid = _grid(args.grid)
    if args.command == "compare":
        c.inputs = [p for p in (args.slap_report or args.slap_file,
                                args.srb_report or args.srb_file) if p]
    elif args.command == "plotdata":
        c.inputs = list(args.reports)
    return c


def set_threads(n: Optional[int]):
    if n is None and os.environ.get(ENV_THREADS):
        n = int(os.environ[ENV_THREADS])
    if n:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        set_threads(args.threads)
        config = config_from_args(args)
        if args.command == "corpus":
            emit(cmd_corpus(args), args.out)
            return EXIT_OK
        if args.command == "plotdata":
            for p in cmd_plotdata(config, args.singular):
                print(p)
            return EXIT_OK
        if args.command == "billiard":
            s0, th0 = (float(v) for v in args.orbit.split(","))
            write_orbit(cmd_billiard(config, s0, th0, args.steps), config.out)
            return EXIT_OK
        if args.command == "slap":
            doc, code = cmd_slap(config, args.branches)
        else:
            doc, code = {"srb": cmd_srb, "certify": cmd_certify,
                         "compare": cmd_compare}[args.command](config)
        emit(doc, config.out)
        return code
    except (OSError, ValueError, KeyError, json.JSONDecodeError, PolyergError) as exc:
        print(f"polyerg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
