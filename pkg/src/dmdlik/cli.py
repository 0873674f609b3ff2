"""Command-line interface.

    dmdlik simulate     --config run.toml --out DIR
    dmdlik select-rank  --config run.toml --out DIR
    dmdlik fit          --config run.toml --out DIR
    dmdlik mc-study     --config run.toml --out DIR [--threads N]
    dmdlik validate     --config run.toml --out DIR

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O or
data-format error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import rng
from .config import ModelSpec, Section, load_toml, parse_model_section
from .dfm import PanelData, filter_gap, simulate_dfm, solve_riccati, var_coefficient
from .errors import ConfigError, DataFormatError, DmdlikError, NumericalError
from .estimation import (
    DFMMap,
    GeneratorBinding,
    MAMap,
    MCMCConfig,
    OptConfig,
    ParameterVector,
    mle_fit,
    monte_carlo_study,
    rwmh_sample,
)
from .io import atomic_write_text, read_matrix_csv, write_json, write_matrix_csv
from .ma import assemble_ma, simulate_micro_panel
from .rank import RankConfig, residual_autocov, select_rank

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class Run:
    """Parsed run config plus command-line overrides."""

    def __init__(self, path, seed_override=None, threads=1):
        self.root, self.src = load_toml(path)
        seed = self.root.get("seed", int, 0)
        self.seed = seed if seed_override is None else int(seed_override)
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative", path=self.src.path)
        self.threads = max(1, int(threads))

    @property
    def hash(self) -> str:
        return self.src.hash

    def provenance(self) -> dict:
        return {"config": str(self.src.path), "config_sha256": self.hash, "seed": self.seed}


# --------------------------------------------------------------------------- helpers


def _ma_from_spec(spec: ModelSpec):
    man = spec.manifest
    ma = assemble_ma(man.jac, spec.H, man.c_ss)
    if spec.shock_sigma:
        scale = np.array([float(spec.shock_sigma.get(x, 1.0)) for x in man.jac.shocks])
        ma = type(ma)(ma.Psi * scale, ma.c_ss)
    return ma


def _simulate(spec: ModelSpec, T: int, burn_in: int, seed: int, keep_latent=False) -> PanelData:
    if spec.kind == "dfm":
        return simulate_dfm(spec.dfm, T, burn_in, seed, keep_latent=keep_latent)
    ma = _ma_from_spec(spec)
    if spec.sigma_v is not None:
        return simulate_micro_panel(ma, T, seed, sigma_v=spec.sigma_v)
    return simulate_micro_panel(ma, T, seed, meas_error_share=spec.meas_error_share)


def _load_panel(sec: Section) -> PanelData:
    path = sec.path("file")
    return PanelData(read_matrix_csv(path))


def _parameters(root: Section) -> tuple[ParameterVector, dict]:
    entries = root.get("parameters", list)
    if not entries:
        raise root.error("at least one [[parameters]] entry is required", "parameters")
    names, values, bounds, targets, truth = [], [], [], {}, []
    for raw in entries:
        sec = Section(raw, "parameters", root.src)
        name = sec.get("name", str)
        target = sec.get("target", (str, list))
        target = (target,) if isinstance(target, str) else tuple(str(t) for t in target)
        lo, hi = sec.get("lo", float), sec.get("hi", float)
        init = sec.get("init", float)
        truth.append(sec.get("true", float, init))
        sec.finish()
        if not lo < hi:
            raise sec.error(f"parameter {name!r} needs lo < hi", "lo")
        names.append(name)
        values.append(init)
        bounds.append((lo, hi))
        targets[name] = target
    try:
        pv = ParameterVector(names, values, bounds)
        tv = ParameterVector(names, truth, bounds)
    except (ValueError, DmdlikError) as exc:
        raise root.error(str(exc), "parameters") from None
    return pv, {"targets": targets, "truth": tv}


def _binding(run: Run, spec: ModelSpec, targets: dict) -> GeneratorBinding:
    sec = run.root.section("binding")
    try:
        if spec.kind == "dfm":
            mapper = DFMMap(spec.dfm, targets)
        else:
            man = spec.manifest
            mapper = MAMap(man.jac, targets, spec.H, spec.shock_sigma, spec.sigma_v or 0.0, man.c_ss)
    except (ValueError, DmdlikError) as exc:
        raise run.root.error(str(exc), "parameters") from None
    binding = GeneratorBinding(
        kind=spec.kind,
        map=mapper,
        J=sec.get("J", int),
        N=sec.get("N", int),
        base_seed=rng.derive_seed(run.seed, 1),
        common_random_numbers=sec.get("common_random_numbers", bool, True),
        burn_in=sec.get("burn_in", int, 200),
        demean=sec.get("demean", bool, None),
        shrinkage=sec.get("shrinkage", float, None),
        horizon=sec.get("horizon", int, 300),
    )
    sec.finish()
    return binding


def _estimator(run: Run):
    sec = run.root.section("estimator")
    method = sec.get("method", str, "mle")
    if method in ("mle", "whittle-mle"):
        cfg = OptConfig(
            ftol=sec.get("ftol", float, 1e-3),
            max_evals=sec.get("max_evals", int, 2000),
            initial_step=sec.get("initial_step", float, 0.1),
            bound_tol=sec.get("bound_tol", float, 1e-3),
            objective="whittle" if method == "whittle-mle" else "dmd",
        )
    elif method == "rwmh":
        try:
            cfg = MCMCConfig(
                steps=sec.get("steps", int, 20000),
                burn_in=sec.get("burn_in", int, 5000),
                target_accept=sec.get("target_accept", float, 0.234),
                adapt_interval=sec.get("adapt_interval", int, 100),
                initial_step_scale=sec.get("initial_step_scale", float, 0.02),
                seed=rng.derive_seed(run.seed, 2),
            )
        except ValueError as exc:
            raise sec.error(str(exc)) from None
    else:
        raise sec.error(f"method must be 'mle', 'whittle-mle' or 'rwmh', got {method!r}", "method")
    sec.finish()
    return method, cfg


def _write_outputs(out: Path, files: dict):
    for name, content in files.items():
        if isinstance(content, np.ndarray):
            write_matrix_csv(out / name, content)
        elif isinstance(content, str):
            atomic_write_text(out / name, content)
        else:
            write_json(out / name, content)


# --------------------------------------------------------------------------- commands


def cmd_simulate(run: Run, out: Path):
    spec = parse_model_section(run.root.section("model"))
    sec = run.root.section("simulate")
    T = sec.get("T", int)
    burn_in = sec.get("burn_in", int, 0)
    keep_latent = sec.get("keep_latent", bool, False)
    sec.finish()
    run.root.finish()
    if T < 1 or burn_in < 0:
        raise sec.error("need T >= 1 and burn_in >= 0", "T")
    panel = _simulate(spec, T, burn_in, run.seed, keep_latent and spec.kind == "dfm")
    meta = {**run.provenance(), "kind": spec.kind, "M": panel.M, "T": panel.T, "burn_in": burn_in, **panel.meta}
    files = {"panel.csv": panel.Y, "panel.json": meta}
    if panel.latent is not None:
        files["latent.csv"] = panel.latent
    _write_outputs(out, files)
    return meta


def cmd_select_rank(run: Run, out: Path):
    panel = _load_panel(run.root.section("data"))
    sec = run.root.section("rank")
    n_max = sec.get("n_max", int)
    try:
        cfg = RankConfig(
            plateau_tol=sec.get("plateau_tol", float, 0.005),
            primary=sec.get("primary", str, "r2"),
            sigma=sec.get("sigma", float, None),
            demean=sec.get("demean", bool, False),
            weights=sec.get("weights", list, None),
        )
    except ValueError as exc:
        raise sec.error(str(exc)) from None
    sec.finish()
    run.root.finish()
    try:
        report = select_rank(panel, n_max, cfg)
    except DmdlikError:
        raise
    except ValueError as exc:
        raise sec.error(str(exc), "n_max") from None
    summary = {**run.provenance(), **report.to_dict()}
    _write_outputs(out, {"rank.json": summary, "rank.txt": report.table() + "\n"})
    return summary


def cmd_fit(run: Run, out: Path):
    spec = parse_model_section(run.root.section("model"))
    panel = _load_panel(run.root.section("data"))
    init, extra = _parameters(run.root)
    binding = _binding(run, spec, extra["targets"])
    method, cfg = _estimator(run)
    run.root.finish()
    if method == "rwmh":
        res = rwmh_sample(panel, binding, init, cfg)
        summary = {**run.provenance(), "method": method, "names": list(init.names), **res.summary(),
                   "proposal_cov": res.proposal_cov}
        _write_outputs(out, {"chain.csv": res.chain, "chain.json": summary})
        return summary
    res = mle_fit(panel, binding, init, cfg)
    summary = {**run.provenance(), "method": method, **res.to_dict()}
    _write_outputs(out, {"fit.json": summary, "trace.csv": res.trace})
    return summary


def cmd_mc_study(run: Run, out: Path):
    spec = parse_model_section(run.root.section("model"))
    init, extra = _parameters(run.root)
    binding = _binding(run, spec, extra["targets"])
    method, cfg = _estimator(run)
    sec = run.root.section("study")
    reps = sec.get("replications", int)
    T = sec.get("T", int)
    burn_in = sec.get("burn_in", int, None)
    sec.finish()
    run.root.finish()
    if reps < 1:
        raise sec.error("replications must be >= 1", "replications")
    study = monte_carlo_study(
        binding,
        extra["truth"],
        estimator=method,
        replications=reps,
        master_seed=run.seed,
        T=T,
        data_burn_in=burn_in,
        init=init,
        opt_config=cfg if method != "rwmh" else None,
        mcmc_config=cfg if method == "rwmh" else None,
        threads=run.threads,
    )
    summary = {**run.provenance(), "names": list(init.names), **study.to_dict()}
    _write_outputs(out, {"study.csv": study.draws, "study.json": summary, "study.txt": study.table() + "\n"})
    return summary


def cmd_validate(run: Run, out: Path):
    spec = parse_model_section(run.root.section("model"))
    if spec.kind != "dfm":
        raise run.root.error("validate needs a state-space model (kind = 'dfm')", "kind")
    model = spec.dfm
    sec = run.root.section("validate", required=False) or Section({}, "validate", run.src)
    ladder = sec.get("M_ladder", list, [model.M])
    lags = sec.get("lags", int, 5)
    T = sec.get("T", int, 2000)
    burn_in = sec.get("burn_in", int, 200)
    sec.finish()
    run.root.finish()
    if any((not isinstance(m, int)) or m < model.N or m > model.M for m in ladder):
        raise sec.error(f"M_ladder entries must be integers in [{model.N}, {model.M}]", "M_ladder")

    innov = solve_riccati(model)
    rows = []
    for m in sorted(set(ladder)):
        sub = model.with_loadings(model.G[:m])
        inn = solve_riccati(sub)
        rows.append({"M": m, "filter_gap_norm": float(np.linalg.norm(filter_gap(sub, inn), 2))})
    b_norms = [float(np.linalg.norm(var_coefficient(model, innov, j), 2)) for j in range(1, lags + 1)]
    panel = simulate_dfm(model, T, burn_in, run.seed)
    resid = panel.Y[:, 1:] - innov.B1 @ panel.Y[:, :-1]
    report = {
        **run.provenance(),
        "riccati_residual": innov.riccati_residual,
        "riccati_iterations": innov.iterations,
        "filter_gap_ladder": rows,
        "var_coefficient_norms": b_norms,
        "residual_autocov_max": residual_autocov(resid),
        "assumption_violations": model.assumption_violations(),
    }
    _write_outputs(out, {"validate.json": report})
    return report


COMMANDS = {
    "simulate": cmd_simulate,
    "select-rank": cmd_select_rank,
    "fit": cmd_fit,
    "mc-study": cmd_mc_study,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmdlik", description="DMD likelihood tools for dynamic factor models")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = Run(args.config, args.seed, args.threads)
        COMMANDS[args.command](run, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DmdlikError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
