"""Command-line front end: spectrum, reduce, epi-check, decay, report.

Pipeline commands emit delimited data plus a JSON summary; every output
embeds the resolved config hash, master seed and package version.  With
``--no-timestamp`` two runs of the same config are byte-identical, including
at different ``--jobs`` values.  The ``report`` command aggregates whatever
artifacts it finds in the output directory and renders figures next to them.
"""

import argparse
import concurrent.futures
import csv
import dataclasses
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .competitor import EpiParams, summarize_reports, verify_epi
from .decay import DecayParams, dyadic_flat_sum, fit_power_rate, integrate_excess
from .functional import NormalField
from .geometry import ConeSpec, UnsupportedConeError, build_cross_section
from .reduction import (ReducedFunction, ReducedMap, integrability_test,
                        lojasiewicz_fit, quartic_fixture, saddle_fixture)
from .spectral import eigendecompose, save_spectrum_csv
from .traces import TraceEnsembleSpec, sample

# Reference resolutions and calibrated verification contractions per family.
# eps_check = half the worst contraction achieved by the eps=0.1 cutoff over
# seeded 500-trace mixed + 200-trace pure-positive ensembles at delta=0.02.
PRESETS = {
    "clifford": {"resolution": (24, 24), "eps_check": 0.023},
    "plane:2,1": {"resolution": (48,), "eps_check": 0.031},
    "plane:3,1": {"resolution": (16,), "eps_check": 0.023},
    "plane:2,2": {"resolution": (48,), "eps_check": 0.031},
    "product:1,2": {"resolution": (12, 12), "eps_check": 0.018},
}

EXIT_USAGE = 2
EXIT_INCONCLUSIVE = 3


def parse_cone(token):
    """'clifford' | 'plane:N,K' | 'product:P,Q' -> ConeSpec kwargs."""
    token = token.strip().lower()
    if token == "clifford":
        return {"family": "clifford"}
    for prefix, family, names in (("plane:", "plane", ("n", "k")),
                                  ("product:", "sphere_product", ("p", "q"))):
        if token.startswith(prefix):
            try:
                a, b = (int(v) for v in token[len(prefix):].split(","))
            except ValueError:
                raise UnsupportedConeError(f"cannot parse cone {token!r}")
            return {"family": family, names[0]: a, names[1]: b}
    raise UnsupportedConeError(f"unknown cone {token!r}")


def preset_key(kwargs):
    if kwargs["family"] == "clifford":
        return "clifford"
    if kwargs["family"] == "plane":
        return f"plane:{kwargs['n']},{kwargs['k']}"
    return f"product:{kwargs['p']},{kwargs['q']}"


def config_hash(payload):
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _header_lines(cfg, timestamp):
    lines = [f"config_hash={config_hash(cfg)}", f"version={__version__}"]
    if "seed" in cfg:
        lines.append(f"seed={cfg['seed']}")
    if timestamp:
        lines.append(f"timestamp={datetime.datetime.now().isoformat()}")
    return lines


def write_csv(path, cfg, fieldnames, rows, timestamp):
    with open(path, "w", newline="") as fh:
        for line in _header_lines(cfg, timestamp):
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(path, cfg, payload, timestamp):
    body = {
        "config_hash": config_hash(cfg),
        "version": __version__,
        "config": cfg,
        **payload,
    }
    if timestamp:
        body["timestamp"] = datetime.datetime.now().isoformat()
    with open(path, "w") as fh:
        json.dump(body, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if dataclasses.is_dataclass(v):
        return dataclasses.asdict(v)
    return str(v)


def build_context(cone_token, resolution=None, kernel_tol=1e-8):
    kwargs = parse_cone(cone_token)
    preset = PRESETS.get(preset_key(kwargs), {})
    res = resolution or preset.get("resolution")
    if res is None:
        res = (24,) if kwargs["family"] == "plane" else (16, 16)
    spec = ConeSpec(resolution=tuple(res), **kwargs)
    cs = build_cross_section(spec)
    basis = eigendecompose(cs, kernel_tol=kernel_tol)
    return spec, cs, basis, preset


def _parse_resolution(text):
    if text is None:
        return None
    return tuple(int(v) for v in text.split(","))


# -- commands -----------------------------------------------------------------

def cmd_spectrum(args):
    spec, cs, basis, _ = build_context(args.cone, _parse_resolution(args.resolution))
    cfg = {"command": "spectrum", "cone": args.cone,
           "resolution": list(spec.resolution), "kernel_tol": basis.kernel_tol}
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "spectrum.csv")
    save_spectrum_csv(basis, path, _header_lines(cfg, not args.no_timestamp))
    summary = {
        "family": spec.label(),
        "kernel_dim": basis.ell,
        "gap_minus": basis.gap_minus,
        "gap_plus": basis.gap_plus,
        "degenerate_gap": basis.degenerate_gap,
        "n_modes": basis.n_modes,
        "n_nodes": cs.n_nodes,
    }
    write_json(os.path.join(args.out, "spectrum_summary.json"), cfg, summary,
               not args.no_timestamp)
    print(f"spectrum: {basis.n_modes} modes, kernel dim {basis.ell}, "
          f"gaps ({basis.gap_minus:.6g}, {basis.gap_plus:.6g})")
    if basis.degenerate_gap:
        print("error: degenerate spectral gap", file=sys.stderr)
        return 1
    return 0


def cmd_reduce(args):
    cfg = {"command": "reduce", "cone": args.cone, "synthetic": args.synthetic,
           "radius": args.radius, "samples": args.samples, "seed": args.seed,
           "tol": args.tol, "rho_k": args.rho_k}
    os.makedirs(args.out, exist_ok=True)
    if args.synthetic:
        rf = {"quartic": quartic_fixture, "saddle": saddle_fixture}[args.synthetic]()
        label = args.synthetic
    else:
        spec, cs, basis, _ = build_context(args.cone,
                                           _parse_resolution(args.resolution))
        cfg["resolution"] = list(spec.resolution)
        rmap = ReducedMap(basis, domain_radius=args.rho_k)
        rf = ReducedFunction(rmap)
        label = spec.label()

    result = integrability_test(rf, args.radius, args.samples, args.tol,
                                seed=args.seed)
    rows = []
    for mu, a, grad in result.get("samples", []):
        row = {f"mu_{j}": mu[j] for j in range(len(mu))}
        row["A"] = a
        row.update({f"gradA_{j}": grad[j] for j in range(len(grad))})
        row["grad_norm"] = float(np.linalg.norm(grad))
        rows.append(row)
    if rows:
        fieldnames = list(rows[0].keys())
        write_csv(os.path.join(args.out, "reduce.csv"), cfg, fieldnames, rows,
                  not args.no_timestamp)

    if result["inconclusive"]:
        verdict = "inconclusive"
        fit = None
    elif result["integrable"]:
        verdict = "integrable"
        fit = lojasiewicz_fit(rf, args.radius, args.samples, seed=args.seed)
    else:
        verdict = "non-integrable"
        fit = lojasiewicz_fit(rf, args.radius, args.samples, seed=args.seed)
    summary = {
        "target": label,
        "verdict": verdict,
        "max_abs_A": result["max_abs_A"],
        "max_grad": result["max_grad"],
        "n_evaluated": result["n_evaluated"],
    }
    if result["inconclusive"]:
        summary["reason"] = result.get("reason", "")
    if fit is not None:
        summary.update({"gamma_loj": fit.gamma, "C_loj": fit.constant,
                        "loj_vacuous": fit.vacuous})
    write_json(os.path.join(args.out, "reduce_summary.json"), cfg, summary,
               not args.no_timestamp)
    print(f"reduce[{label}]: verdict={verdict} max|A|={result['max_abs_A']:.3e}"
          + (f" gamma_loj={fit.gamma}" if fit else ""))
    return EXIT_INCONCLUSIVE if verdict == "inconclusive" else 0


_EPI_CTX = {}


def _epi_init(cone, resolution, params_kw, kernel_tol):
    spec, cs, basis, _ = build_context(cone, resolution, kernel_tol)
    rmap = ReducedMap(basis)
    _EPI_CTX["basis"] = basis
    _EPI_CTX["rf"] = ReducedFunction(rmap)
    _EPI_CTX["params"] = EpiParams(**params_kw)


def _epi_trace(item):
    idx, coef = item
    basis = _EPI_CTX["basis"]
    field = NormalField(basis.cs, coef)
    rep = verify_epi(field, _EPI_CTX["params"], _EPI_CTX["rf"], basis)
    return idx, rep


def cmd_epi_check(args):
    kwargs = parse_cone(args.cone)
    preset = PRESETS.get(preset_key(kwargs), {})
    resolution = _parse_resolution(args.resolution) or preset.get("resolution")
    eps_check = args.eps_check if args.eps_check is not None \
        else preset.get("eps_check", 0.02)
    # traces above the admissible bound are sampled anyway and get refused
    params_delta = min(args.delta, 0.2499999)
    params_kw = dict(eps=args.eps, eps_check=eps_check, delta=params_delta,
                     gamma_epi=args.gamma, n_radial=args.n_radial)
    tspec = TraceEnsembleSpec(seed=args.seed, count=args.ensemble_size,
                              norm_target=args.delta, norm_type="c1alpha",
                              class_filter=args.trace_class)
    cfg = {"command": "epi-check", "cone": args.cone,
           "resolution": list(resolution) if resolution else None,
           "seed": args.seed, "ensemble_size": args.ensemble_size,
           "delta": args.delta, "gamma": args.gamma, "eps": args.eps,
           "eps_check": eps_check, "trace_class": args.trace_class,
           "jobs": None}  # jobs intentionally excluded from the hash

    spec, cs, basis, _ = build_context(args.cone, resolution)
    traces = sample(tspec, basis)
    items = [(i, t.coef) for i, t in enumerate(traces)]

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=args.jobs, initializer=_epi_init,
                initargs=(args.cone, resolution, params_kw, 1e-8)) as pool:
            results = list(pool.map(_epi_trace, items, chunksize=8))
        results.sort(key=lambda pair: pair[0])
        reports = [rep for _, rep in results]
    else:
        _epi_init(args.cone, resolution, params_kw, 1e-8)
        reports = [_epi_trace(item)[1] for item in items]

    summary = summarize_reports(reports)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for i, rep in enumerate(reports):
        row = {"trace": i}
        row.update(rep.to_row())
        rows.append(row)
    fieldnames = list(rows[0].keys())
    write_csv(os.path.join(args.out, "epi_check.csv"), cfg, fieldnames, rows,
              not args.no_timestamp)
    summary["manifest"] = tspec.manifest()
    summary["params"] = params_kw
    write_json(os.path.join(args.out, "epi_summary.json"), cfg, summary,
               not args.no_timestamp)

    refused = summary["counts"].get("refused", 0)
    print(f"epi-check[{spec.label()}]: {summary['n_traces']} traces, "
          f"pass_rate={summary['pass_rate']:.4f} "
          f"min_eps={summary['min_eps_achieved']} refused={refused}")
    if refused:
        print(f"warning: {refused} traces exceeded the admissible bound "
              f"delta={params_delta:.4g} and were refused", file=sys.stderr)
    failed = summary["counts"].get("fail", 0)
    return 1 if failed else 0


def cmd_decay(args):
    params = DecayParams(n=args.n, eps=args.eps, gamma=args.gamma,
                         alpha=args.alpha, C_am=args.c_am, r0=args.r0,
                         e0=args.e0, j_max=args.j_max, n_points=args.points)
    cfg = {"command": "decay", **dataclasses.asdict(params)}
    traj = integrate_excess(params)
    os.makedirs(args.out, exist_ok=True)
    rows = [
        {"r": float(r), "e": float(e), "etilde": float(et), "M": float(m),
         "bound": float(b)}
        for r, e, et, m, b in zip(traj.r, traj.e, traj.etilde,
                                  traj.monitored, traj.bound)
    ]
    write_csv(os.path.join(args.out, "decay.csv"), cfg,
              ["r", "e", "etilde", "M", "bound"], rows, not args.no_timestamp)
    summary = {"params": dataclasses.asdict(params)}
    if params.gamma > 0:
        fit = dyadic_flat_sum(traj, min(2, params.j_max), params.j_max)
        expected = (params.gamma - 1.0) / (2.0 * params.gamma)
        summary.update({
            "dyadic_slope": fit["slope_fit"],
            "expected_slope": expected,
            "slope_rel_err": abs(fit["slope_fit"] - expected) / abs(expected),
            "S": fit["S"],
        })
    else:
        if params.e0 > 0:
            rate = fit_power_rate(traj, r_lo=2.0 ** (-2.0 ** min(5, params.j_max)))
            summary.update({
                "power_exponent": rate,
                "expected_exponent": params.n * params.eps,
                "rate_rel_err": abs(rate - params.n * params.eps)
                / (params.n * params.eps),
            })
        else:
            summary["all_zero"] = True
    write_json(os.path.join(args.out, "decay_summary.json"), cfg, summary,
               not args.no_timestamp)
    print(f"decay: gamma={params.gamma} -> " + json.dumps(
        {k: v for k, v in summary.items() if k != "params"}, default=str))
    return 0


def cmd_report(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    meta = {"conelab-config": config_hash({"command": "report", "out": args.out}),
            "conelab-version": __version__}

    out = args.out
    found = {}
    for name in ("spectrum_summary", "reduce_summary", "epi_summary",
                 "decay_summary"):
        path = os.path.join(out, f"{name}.json")
        if os.path.exists(path):
            with open(path) as fh:
                found[name] = json.load(fh)

    figures = []

    def _load_csv(name):
        path = os.path.join(out, name)
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            rows = [r for r in csv.DictReader(
                line for line in fh if not line.startswith("#"))]
        return rows

    spec_rows = _load_csv("spectrum.csv")
    if spec_rows:
        lam = np.array([float(r["eigenvalue"]) for r in spec_rows])
        mult = np.array([int(r["multiplicity"]) for r in spec_rows])
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.stem(lam, mult)
        ax.axvspan(-1e-8, 1e-8, color="red", alpha=0.3, label="kernel")
        ax.set_xlabel("eigenvalue")
        ax.set_ylabel("multiplicity")
        ax.set_title("Jacobi spectrum")
        fig.tight_layout()
        path = os.path.join(out, "spectrum.png")
        fig.savefig(path, dpi=150, metadata=meta)
        plt.close(fig)
        figures.append(path)

    decay_rows = _load_csv("decay.csv")
    if decay_rows:
        r = np.array([float(x["r"]) for x in decay_rows])
        e = np.array([float(x["e"]) for x in decay_rows])
        b = np.array([float(x["bound"]) for x in decay_rows])
        fig, ax = plt.subplots(figsize=(6, 4))
        mask = (r > 0) & (e > 0)
        ax.plot(-np.log(r[mask]), e[mask], label="e(r)")
        bm = (r > 0) & (b > 0)
        ax.plot(-np.log(r[bm]), b[bm], "--", label="closed-form bound")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("-log r")
        ax.set_ylabel("excess")
        ax.legend()
        ax.set_title("density-excess decay")
        fig.tight_layout()
        path = os.path.join(out, "decay.png")
        fig.savefig(path, dpi=150, metadata=meta)
        plt.close(fig)
        figures.append(path)

    epi_rows = _load_csv("epi_check.csv")
    if epi_rows:
        eps = np.array([float(r["eps_achieved"]) for r in epi_rows
                        if r["eps_achieved"]])
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        if len(eps):
            axes[0].hist(eps, bins=24)
        axes[0].set_xlabel("achieved contraction")
        axes[0].set_ylabel("traces")
        az = np.array([float(r["A_z"]) for r in epi_rows if r["A_h"]])
        ah = np.array([float(r["A_h"]) for r in epi_rows if r["A_h"]])
        axes[1].scatter(az, ah, s=8)
        lim = [min(az.min(), ah.min()), max(az.max(), ah.max())] if len(az) \
            else [-1, 1]
        axes[1].plot(lim, lim, "k--", lw=0.8, label="A_h = A_z")
        axes[1].set_xlabel("A_z")
        axes[1].set_ylabel("A_h")
        axes[1].legend()
        fig.suptitle("competitor verification")
        fig.tight_layout()
        path = os.path.join(out, "epi.png")
        fig.savefig(path, dpi=150, metadata=meta)
        plt.close(fig)
        figures.append(path)

    reduce_rows = _load_csv("reduce.csv")
    if reduce_rows:
        mu_cols = [k for k in reduce_rows[0] if k.startswith("mu_")]
        mu = np.array([[float(r[c]) for c in mu_cols] for r in reduce_rows])
        a = np.array([abs(float(r["A"])) for r in reduce_rows])
        g = np.array([float(r["grad_norm"]) for r in reduce_rows])
        nm = np.linalg.norm(mu, axis=1)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.scatter(nm, a + 1e-300, s=8, label="|A|")
        ax.scatter(nm, g + 1e-300, s=8, marker="x", label="|grad A|")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("|mu|")
        ax.legend()
        ax.set_title("reduced area samples")
        fig.tight_layout()
        path = os.path.join(out, "reduce.png")
        fig.savefig(path, dpi=150, metadata=meta)
        plt.close(fig)
        figures.append(path)

    cfg = {"command": "report", "out": out}
    write_json(os.path.join(out, "report.json"), cfg,
               {"inputs": sorted(found), "figures": sorted(figures),
                "summaries": found}, not args.no_timestamp)
    rows = []
    for name, payload in sorted(found.items()):
        for key, value in sorted(payload.items()):
            if isinstance(value, (int, float, str, bool)):
                rows.append({"source": name, "key": key, "value": value})
    write_csv(os.path.join(out, "report.csv"), cfg,
              ["source", "key", "value"], rows, not args.no_timestamp)
    print(f"report: {len(found)} summaries, {len(figures)} figures -> {out}")
    return 0


# -- argument parsing ----------------------------------------------------------

def _add_common(p):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--no-timestamp", action="store_true",
                   help="suppress timestamp headers for byte-stable outputs")
    p.add_argument("--config", default=None,
                   help="JSON file with default option values")


def make_parser():
    parser = argparse.ArgumentParser(
        prog="conelab",
        description="numerical laboratory for cone contraction inequalities",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = subparsers["spectrum"] = \
        sub.add_parser("spectrum", help="Jacobi spectrum and gap summary")
    p.add_argument("--cone", required=True)
    p.add_argument("--resolution", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_spectrum)

    p = subparsers["reduce"] = sub.add_parser("reduce", help="reduced area sampling and verdicts")
    p.add_argument("--cone", default="clifford")
    p.add_argument("--resolution", default=None)
    p.add_argument("--synthetic", choices=("quartic", "saddle"), default=None)
    p.add_argument("--radius", type=float, default=0.03)
    p.add_argument("--samples", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--rho-k", type=float, default=0.05)
    _add_common(p)
    p.set_defaults(func=cmd_reduce)

    p = subparsers["epi-check"] = sub.add_parser("epi-check", help="verify the contraction inequality")
    p.add_argument("--cone", default="clifford")
    p.add_argument("--resolution", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ensemble-size", type=int, default=100)
    p.add_argument("--delta", type=float, default=0.02)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--eps-check", type=float, default=None)
    p.add_argument("--n-radial", type=int, default=32)
    p.add_argument("--trace-class", default="mixed",
                   choices=("mixed", "pure-kernel", "pure-positive",
                            "pure-negative"))
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_epi_check)

    p = subparsers["decay"] = sub.add_parser("decay", help="integrate the excess decay model")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--c-am", type=float, default=0.0)
    p.add_argument("--r0", type=float, default=1.0)
    p.add_argument("--e0", type=float, default=0.5)
    p.add_argument("--j-max", type=int, default=10)
    p.add_argument("--points", type=int, default=256)
    _add_common(p)
    p.set_defaults(func=cmd_decay)

    p = subparsers["report"] = sub.add_parser("report", help="aggregate outputs and render figures")
    _add_common(p)
    p.set_defaults(func=cmd_report)
    return parser, subparsers


def main(argv=None):
    parser, subparsers = make_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        defaults = {k.replace("-", "_"): v for k, v in overrides.items()}
        known = {k: v for k, v in defaults.items() if hasattr(args, k)}
        # config supplies defaults; explicit command-line flags win on re-parse
        subparsers[args.command].set_defaults(**known)
        args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UnsupportedConeError as exc:
        parser.error(str(exc))  # exits with code 2
    except (ValueError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
