"""Command-line front end: `brease analyze | bf | sensitivity | strata | marginal | replicate`."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from . import __version__
from .comparators import IbPrior, LtPrior, ib_log_ml, ib_posterior_sample, lt_log_ml, lt_posterior_sample
from .covariates import HierarchicalHyperPrior, hierarchical_sample, population_effects, stratified_independent
from .data import (
    ASPIRIN_PHS,
    COVID_PFIZER,
    PATHOLOGICAL,
    DataError,
    StratifiedTrialData,
    TrialData,
    covid_age_strata,
    parse_strata,
    parse_trials,
)
from .evidence import (
    bayes_factor,
    log_ml_directional,
    log_ml_h0_aggregated,
    log_ml_m0,
    log_ml_m1,
    log_ml_monotone,
)
from .model import BreasePrior, brease_eb_prior, default_prior
from .numerics import DomainError, NumericError, RngStream
from .oracle import oracle_posterior_marginal
from .samplers import DrawSet, exact_sample, gibbs_sample
from .summaries import PRIOR_FIELDS, sensitivity_grid, summarize_all

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OUTPUT_ENV = "BREASE_OUTPUT_DIR"


class ArgError(Exception):
    pass


# ------------------------------------------------------------------ parsing


def parse_prior(text: str, data: TrialData | None = None):
    """Prior shorthand: default:<mu> | brease:<mu0>,<mue>,<mus>,<n0>,<ne>,<ns> | eb:<n> | ib:<a> | lt:<sigma_psi>."""
    kind, _, rest = text.partition(":")
    try:
        nums = [float(v) for v in rest.split(",")] if rest else []
    except ValueError:
        raise ArgError(f"prior {text!r}: values must be numbers") from None
    try:
        if kind == "default":
            if len(nums) > 1:
                raise ArgError("default takes one value: default:<mu>")
            return default_prior(*nums)
        if kind == "brease":
            if len(nums) != 6:
                raise ArgError("brease takes six values: brease:<mu0>,<mue>,<mus>,<n0>,<ne>,<ns>")
            return BreasePrior(*nums)
        if kind == "eb":
            if len(nums) != 1:
                raise ArgError("eb takes one value: eb:<n>")
            if data is None:
                raise ArgError("eb priors need trial data")
            return brease_eb_prior(data, nums[0])
        if kind == "ib":
            a = nums[0] if nums else 1.0
            return IbPrior(a, a, a, a)
        if kind == "lt":
            return LtPrior(sigma_psi=nums[0] if nums else 1.0)
    except DomainError as e:
        raise ArgError(f"prior {text!r}: {e}") from None
    raise ArgError(f"unknown prior family {kind!r}; use default, brease, eb, ib or lt")


def parse_axis(text: str) -> tuple[str, list[float]]:
    """Grid axis: `param=v1,v2,...` or `param=lo:hi:n` (n evenly spaced values)."""
    name, sep, spec = text.partition("=")
    if not sep or name not in PRIOR_FIELDS:
        raise ArgError(f"axis {text!r}: expected <param>=<values> with param in {PRIOR_FIELDS}")
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            return name, np.linspace(float(lo), float(hi), int(n)).tolist()
        return name, [float(v) for v in spec.split(",")]
    except ValueError:
        raise ArgError(f"axis {text!r}: malformed values") from None


def _trial_from_args(args) -> TrialData:
    counts = (args.y0, args.n0, args.y1, args.n1)
    if args.input:
        if any(c is not None for c in counts):
            raise ArgError("give either --input or inline counts, not both")
        corpus = parse_trials(Path(args.input).read_bytes())
        if args.study:
            return corpus[args.study]
        if len(corpus) != 1:
            raise ArgError("the input holds several studies; choose one with --study")
        return corpus[0][1]
    if any(c is None for c in counts):
        raise ArgError("inline data needs all of --y0 --n0 --y1 --n1")
    return TrialData(*counts).checked()


def _out_dir(args) -> Path | None:
    out = args.out or os.environ.get(OUTPUT_ENV)
    if not out:
        return None
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(report: dict, args, name: str = "report.json") -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    out = _out_dir(args)
    if out is not None:
        (out / name).write_text(text + "\n", encoding="utf-8")
    print(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _data_dict(d: TrialData) -> dict:
    return {"y0": d.y0, "N0": d.N0, "y1": d.y1, "N1": d.N1, "fingerprint": d.fingerprint()}


def _summaries(draws: DrawSet, level: float) -> dict:
    return {k: v.as_dict() for k, v in summarize_all(draws, level).items()}


# ------------------------------------------------------------------ sampling


def _sample(data, prior, args) -> DrawSet:
    chains, total = args.chains, args.draws
    if chains < 1 or total < chains:
        raise ArgError("need --chains >= 1 and --draws >= --chains")
    per = -(-total // chains)
    if args.sampler == "gibbs":
        return gibbs_sample(data, prior, per, args.seed, burn_in=args.burn_in, chains=chains, constraint=args.constraint)
    if chains == 1:
        return exact_sample(data, prior, total, args.seed, constraint=args.constraint)
    streams = RngStream(args.seed).spawn(chains)
    with ThreadPoolExecutor(max_workers=chains) as pool:
        parts = list(pool.map(lambda s: exact_sample(data, prior, per, s, constraint=args.constraint), streams))
    meta = dict(parts[0].meta, chains=chains, seed=args.seed)
    return DrawSet.concat(parts, meta)


def _evidence_block(data: TrialData, prior: BreasePrior) -> dict:
    ev = {
        "M0": log_ml_m0(data, prior),
        "M1": log_ml_m1(data, prior),
        "M_minus_mono": log_ml_monotone(data, prior, "no_harm"),
        "M_plus_mono": log_ml_monotone(data, prior, "no_benefit"),
        "H0_aggregated": log_ml_h0_aggregated(data, prior),
    }
    out = {k: v.report() for k, v in ev.items()}
    bf = bayes_factor(ev["M1"], ev["M0"])
    out["BF10"] = {"bf": bf.bf, "log_bf": bf.log_bf}
    return out


# ------------------------------------------------------------------ commands


def cmd_analyze(args) -> int:
    data = _trial_from_args(args)
    prior = parse_prior(args.prior, data)
    report = {"command": "analyze", "data": _data_dict(data), "seed": args.seed, "prior_spec": args.prior}
    if isinstance(prior, IbPrior):
        draws = ib_posterior_sample(data, prior, args.draws, args.seed)
        ev = [ib_log_ml(data, prior, h) for h in ("H0", "H1")]
        report["evidence"] = {e.model: e.report() for e in ev}
    elif isinstance(prior, LtPrior):
        lt = lt_posterior_sample(data, prior, args.draws, args.seed, burn_in=args.burn_in)
        draws = lt.to_drawset()
        ev = [lt_log_ml(data, prior, h) for h in ("H0", "H1")]
        report["evidence"] = {e.model: e.report() for e in ev}
        report["acceptance"] = lt.acceptance
    else:
        draws = _sample(data, prior, args)
        report["prior"] = json.loads(prior.to_json())
        report["evidence"] = _evidence_block(data, prior)
    report["sampler"] = draws.meta
    report["summaries"] = _summaries(draws, args.level)
    out = _out_dir(args)
    if out is not None:
        draws.to_csv(out / "draws.csv")
    _emit(report, args)
    return EXIT_OK


def cmd_bf(args) -> int:
    data = _trial_from_args(args)
    report = {"command": "bf", "data": _data_dict(data)}
    if args.comparator == "ib":
        prior = IbPrior(args.a, args.a, args.a, args.a)
        h0, h1 = ib_log_ml(data, prior, "H0"), ib_log_ml(data, prior, "H1")
    elif args.comparator == "lt":
        prior = LtPrior(sigma_psi=args.sigma_psi)
        h0, h1 = lt_log_ml(data, prior, "H0"), lt_log_ml(data, prior, "H1")
    else:
        prior = parse_prior(args.prior, data)
        if not isinstance(prior, BreasePrior):
            raise ArgError("use --comparator for ib and lt Bayes factors")
        report["prior"] = json.loads(prior.to_json())
        report["evidence"] = _evidence_block(data, prior)
        if args.directional:
            if args.seed is None:
                raise ArgError("--directional needs --seed")
            for i, direction in enumerate(("benefit", "harm")):
                seed = RngStream(args.seed).spawn(2)[i]
                ev = log_ml_directional(data, prior, direction, args.draws, args.draws, seed=seed)
                report["evidence"][ev.model] = dict(ev.report(), **ev.meta)
        _emit(report, args)
        return EXIT_OK
    bf = bayes_factor(h1, h0)
    report["comparator"] = args.comparator
    report["evidence"] = {h0.model: h0.report(), h1.model: h1.report()}
    report["BF10"] = {"bf": bf.bf, "log_bf": bf.log_bf}
    report["BF01"] = {"bf": float(np.exp(-bf.log_bf)), "log_bf": -bf.log_bf}
    _emit(report, args)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    data = _trial_from_args(args)
    prior = parse_prior(args.prior, data)
    if not isinstance(prior, BreasePrior):
        raise ArgError("sensitivity grids need a BREASE prior")
    pair = tuple(args.pair.split(","))
    if len(pair) != 2:
        raise ArgError("--pair takes two model labels, e.g. M1,M0")
    grid = sensitivity_grid(data, prior, parse_axis(args.axis1), parse_axis(args.axis2), pair)
    text = grid.to_csv()
    out = _out_dir(args)
    if out is not None:
        (out / "grid.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _load_strata(path: str) -> StratifiedTrialData:
    return parse_strata(Path(path).read_bytes())


def _strata_report(strata: StratifiedTrialData, draws, args) -> dict:
    per = {lab: _summaries(draws[lab], args.level) for lab in draws.labels}
    pop = population_effects(draws, strata, args.concentration, seed=RngStream(args.seed).spawn(1)[0])
    return {
        "strata": per,
        "population": _summaries(pop.to_drawset(), args.level),
        "propensities": dict(zip(draws.labels, pop.weights.propensities.tolist())),
        "meta": draws.meta,
    }


def cmd_strata(args) -> int:
    strata = _load_strata(args.input) if args.input else covid_age_strata()
    if args.mode == "independent":
        prior = parse_prior(args.prior)
        if not isinstance(prior, BreasePrior):
            raise ArgError("stratified analyses need a BREASE prior")
        draws = stratified_independent(strata, prior, args.draws, args.seed)
    else:
        hyper = HierarchicalHyperPrior(**json.loads(args.hyper)) if args.hyper else HierarchicalHyperPrior()
        draws = hierarchical_sample(strata, hyper, args.draws, args.burn_in, args.seed)
        out = _out_dir(args)
        if out is not None:
            (out / "hyper_chain.csv").write_text(draws.hyper_csv(), encoding="utf-8")
    report = {"command": "strata", "mode": args.mode, "seed": args.seed}
    report.update(_strata_report(strata, draws, args))
    _emit(report, args)
    return EXIT_OK


def cmd_marginal(args) -> int:
    data = _trial_from_args(args)
    prior = parse_prior(args.prior, data)
    if not isinstance(prior, BreasePrior):
        raise ArgError("the quadrature marginal needs a BREASE prior")
    tab = oracle_posterior_marginal(data, prior, args.target, grid=args.grid)
    lines = [f"{args.target},density"] + [f"{x!r},{v!r}" for x, v in zip(tab.x.tolist(), tab.density.tolist())]
    text = "\n".join(lines) + "\n"
    out = _out_dir(args)
    if out is not None:
        (out / f"marginal_{args.target}.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- replicate


def _bf_pair(num, den) -> dict:
    b = bayes_factor(num, den)
    return {"bf": b.bf, "log_bf": b.log_bf}


def _replicate_aspirin(seed: int, draws: int) -> dict:
    d, p = ASPIRIN_PHS, default_prior()
    rng = RngStream(seed).spawn(3)
    vague = BreasePrior(0.5, 0.5, 0.5, 2, 1, 1)
    ib = IbPrior()
    lt = LtPrior()
    return {
        "brease": _summaries(exact_sample(d, p, draws, rng[0]), 0.95),
        "ib": _summaries(ib_posterior_sample(d, ib, draws, rng[1]), 0.95),
        "lt": _summaries(lt_posterior_sample(d, lt, draws, rng[2]).to_drawset(), 0.95),
        "BF10_brease": _bf_pair(log_ml_m1(d, p), log_ml_m0(d, p)),
        "BF01_ib": _bf_pair(ib_log_ml(d, ib, "H0"), ib_log_ml(d, ib, "H1")),
        "BF10_lt": _bf_pair(lt_log_ml(d, lt, "H1"), lt_log_ml(d, lt, "H0")),
        "BF10_mus_0.01": _bf_pair(log_ml_m1(d, vague.replace(mus=0.01)), log_ml_m0(d, vague)),
        "BF01_mus_0.5": _bf_pair(log_ml_m0(d, vague), log_ml_m1(d, vague)),
    }


def _replicate_covid(seed: int, draws: int) -> dict:
    d, p = COVID_PFIZER, default_prior()
    rng = RngStream(seed).spawn(5)
    ib, lt = IbPrior(), LtPrior()
    strata = covid_age_strata()
    indep = stratified_independent(strata, p, draws, rng[3])
    hier = hierarchical_sample(strata, HierarchicalHyperPrior(), min(draws, 20000), 5000, rng[4])
    return {
        "brease": _summaries(exact_sample(d, p, draws, rng[0]), 0.95),
        "ib": _summaries(ib_posterior_sample(d, ib, draws, rng[1]), 0.95),
        "lt": _summaries(lt_posterior_sample(d, lt, draws, rng[2]).to_drawset(), 0.95),
        "BF10_brease": _bf_pair(log_ml_m1(d, p), log_ml_m0(d, p)),
        "BF10_ib": _bf_pair(ib_log_ml(d, ib, "H1"), ib_log_ml(d, ib, "H0")),
        "BF10_lt": _bf_pair(lt_log_ml(d, lt, "H1"), lt_log_ml(d, lt, "H0")),
        "strata_independent": {lab: _summaries(indep[lab], 0.95)["vaccine_efficacy"] for lab in indep.labels},
        "strata_hierarchical": {lab: _summaries(hier[lab], 0.95)["vaccine_efficacy"] for lab in hier.labels},
        "hierarchical_meta": hier.meta,
    }


def total_variation(samples, table, bins: int = 100) -> float:
    """TV distance between a sample histogram and an oracle density on the oracle's range."""
    dx = table.x[1] - table.x[0]
    edges = np.linspace(table.x[0] - dx / 2, table.x[-1] + dx / 2, bins + 1)
    counts, _ = np.histogram(samples, edges)
    h = counts / samples.size
    outside = 1.0 - h.sum()
    return float(0.5 * (np.abs(h - table.bin_probabilities(edges)).sum() + outside))


def _replicate_pathological(seed: int, draws: int) -> dict:
    d = PATHOLOGICAL
    prior = BreasePrior(0.5, 0.5, 0.01, 2, 2, 1)
    rng = RngStream(seed).spawn(2)
    ex = exact_sample(d, prior, draws, rng[0])
    gb = gibbs_sample(d, prior, draws, rng[1], burn_in=1000)
    out = {}
    for target in ("theta0", "theta1"):
        tab = oracle_posterior_marginal(d, prior, target)
        out[target] = {
            "tv_exact": total_variation(getattr(ex, target), tab),
            "tv_gibbs": total_variation(getattr(gb, target), tab),
            "ks_exact_vs_gibbs": float(ks_2samp(getattr(ex, target), getattr(gb, target)).statistic),
        }
    out["log_ml_M1"] = log_ml_m1(d, prior).log_ml
    return out


def nejm_log_ml_check(corpus) -> dict:
    """Per-study H1 log evidences of the default BREASE, IB(1) and LT(0,0;1,1) priors."""
    p, ib, lt = default_prior(), IbPrior(), LtPrior()
    rows = {}
    for study, d in corpus:
        rows[study] = {
            "brease": log_ml_m1(d, p).log_ml,
            "ib": ib_log_ml(d, ib, "H1").log_ml,
            "lt": lt_log_ml(d, lt, "H1").log_ml,
        }
    n = max(len(rows), 1)
    return {
        "studies": rows,
        "brease_beats_ib_share": sum(r["brease"] > r["ib"] for r in rows.values()) / n,
        "brease_beats_lt_share": sum(r["brease"] > r["lt"] for r in rows.values()) / n,
    }


def aspirin_meta_check(corpus, seed: int, draws: int) -> dict:
    """Complete pooling, independent per-study and hierarchical risk ratios over a trial corpus."""
    p = default_prior()
    rng = RngStream(seed).spawn(4)
    studies = list(corpus)
    pooled = TrialData(*(int(sum(getattr(d, f) for _, d in studies)) for f in ("y0", "N0", "y1", "N1")))
    strata = StratifiedTrialData(tuple(studies))
    indep = stratified_independent(strata, p, draws, rng[1])
    hier = hierarchical_sample(strata, HierarchicalHyperPrior(), min(draws, 20000), 5000, rng[2])
    pop = population_effects(hier, strata, seed=rng[3])
    return {
        "pooled": _summaries(exact_sample(pooled, p, draws, rng[0]), 0.95)["risk_ratio"],
        "pooled_BF10": _bf_pair(log_ml_m1(pooled, p), log_ml_m0(pooled, p)),
        "independent": {s: _summaries(indep[s], 0.95)["risk_ratio"] for s in strata.labels},
        "hierarchical": {s: _summaries(hier[s], 0.95)["risk_ratio"] for s in strata.labels},
        "hierarchical_average": _summaries(pop.to_drawset(), 0.95)["risk_ratio"],
        "hierarchical_meta": hier.meta,
    }


REPLICATIONS = {
    "aspirin_phs": _replicate_aspirin,
    "covid_pfizer": _replicate_covid,
    "pathological": _replicate_pathological,
}
# Corpora whose counts must be supplied by the user, with the env var naming the CSV.
USER_CORPORA = {"aspirin_meta": "BREASE_ASPIRIN_META_CSV", "nejm": "BREASE_NEJM_CSV"}


def cmd_replicate(args) -> int:
    report = {"command": "replicate", "study": args.study, "seed": args.seed, "draws": args.draws}
    if args.study in USER_CORPORA:
        path = args.input or os.environ.get(USER_CORPORA[args.study])
        if not path:
            raise ArgError(f"{args.study} needs --input or ${USER_CORPORA[args.study]} (CSV: study,y0,N0,y1,N1)")
        corpus = parse_trials(Path(path).read_bytes())
        if args.study == "nejm":
            report.update(nejm_log_ml_check(corpus))
        else:
            report.update(aspirin_meta_check(corpus, args.seed, args.draws))
    else:
        report.update(REPLICATIONS[args.study](args.seed, args.draws))
    _emit(report, args, f"replicate_{args.study}.json")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_counts(p):
    p.add_argument("--y0", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--y1", type=int)
    p.add_argument("--n1", type=int)
    p.add_argument("--input", help="trial CSV with columns study,y0,N0,y1,N1")
    p.add_argument("--study", help="study id inside --input")


def _add_out(p):
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV}; unset means stdout only)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brease", description="Causal beta-prior analysis of two-arm binary trials.")
    ap.add_argument("--version", action="version", version=f"brease {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="posterior summaries, draws and evidences")
    _add_counts(a)
    a.add_argument("--prior", default="default:0.3")
    a.add_argument("--seed", type=int, required=True)
    a.add_argument("--draws", type=int, default=100_000)
    a.add_argument("--sampler", choices=("exact", "gibbs"), default="exact")
    a.add_argument("--chains", type=int, default=1)
    a.add_argument("--burn-in", type=int, default=1000)
    a.add_argument("--constraint", choices=("no_harm", "no_benefit"))
    a.add_argument("--level", type=float, default=0.95)
    _add_out(a)
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bf", help="marginal likelihoods and Bayes factors")
    _add_counts(b)
    b.add_argument("--prior", default="default:0.3")
    b.add_argument("--comparator", choices=("ib", "lt"))
    b.add_argument("--a", type=float, default=1.0, help="IB shape a")
    b.add_argument("--sigma-psi", type=float, default=1.0, help="LT prior scale of the log odds ratio")
    b.add_argument("--directional", action="store_true", help="add Monte Carlo benefit/harm evidences")
    b.add_argument("--seed", type=int)
    b.add_argument("--draws", type=int, default=100_000)
    _add_out(b)
    b.set_defaults(func=cmd_bf)

    s = sub.add_parser("sensitivity", help="Bayes-factor grid over two prior parameters")
    _add_counts(s)
    s.add_argument("--prior", default="brease:0.5,0.5,0.5,2,1,1")
    s.add_argument("--axis1", default="mue=0.01:0.99:50")
    s.add_argument("--axis2", default="mus=0.01:0.99:50")
    s.add_argument("--pair", default="M1,M0")
    _add_out(s)
    s.set_defaults(func=cmd_sensitivity)

    t = sub.add_parser("strata", help="stratified analysis, independent or hierarchical")
    t.add_argument("--input", help="CSV with columns stratum,study,y0,N0,y1,N1 (default: bundled COVID age strata)")
    t.add_argument("--mode", choices=("independent", "hierarchical"), default="independent")
    t.add_argument("--prior", default="default:0.3")
    t.add_argument("--hyper", help="JSON object of HierarchicalHyperPrior fields")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--draws", type=int, default=20_000)
    t.add_argument("--burn-in", type=int, default=5000)
    t.add_argument("--concentration", type=float, default=1.0)
    t.add_argument("--level", type=float, default=0.95)
    _add_out(t)
    t.set_defaults(func=cmd_strata)

    m = sub.add_parser("marginal", help="quadrature posterior density of theta0 or theta1")
    _add_counts(m)
    m.add_argument("--prior", default="default:0.3")
    m.add_argument("--target", choices=("theta0", "theta1"), default="theta0")
    m.add_argument("--grid", type=int, default=200)
    _add_out(m)
    m.set_defaults(func=cmd_marginal)

    r = sub.add_parser("replicate", help="case-study report (bundled data, or --input for user corpora)")
    r.add_argument("study", choices=sorted([*REPLICATIONS, *USER_CORPORA]))
    r.add_argument("--input", help="trial CSV for aspirin_meta and nejm")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--draws", type=int, default=100_000)
    _add_out(r)
    r.set_defaults(func=cmd_replicate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ArgError as e:
        print(f"brease: argument error: {e}", file=sys.stderr)
        return EXIT_ARGS
    except DataError as e:
        print(f"brease: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"brease: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as e:
        print(f"brease: argument error: {e}", file=sys.stderr)
        return EXIT_ARGS
    except (KeyError, OSError) as e:
        print(f"brease: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
