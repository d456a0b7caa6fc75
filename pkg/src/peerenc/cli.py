"""Command-line entry point: generate populations, evaluate exact estimands,
replicate the design, and verify the identification identities.

All outputs are deterministic functions of (config file, seed); seeds are
mandatory and never default to the clock.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import _streams
from .design import DesignConfig, run_design
from .errors import PeerEncError, InvalidConfig
from .estimands import compute_estimand_report
from .mechanisms import Mechanism
from .montecarlo import replicate, verification_passes, verify_theorems
from .population import DgpConfig, OutcomeConfig, build_population, load_population, \
    save_population, validate

_DGP_STREAM = 0

_STRATA_KEYS = ("always_taker", "complier", "never_taker", "defier")


def _fail(msg: str) -> "NoReturn":  # noqa: F821 - py>=3.10 has NoReturn in typing only
    print(f"error: {msg}", file=sys.stderr)
    raise SystemExit(2)


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        _fail(f"{path}: no such file")
    except json.JSONDecodeError as exc:
        _fail(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")


def _parse_param(value, where: str):
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, list) and len(value) == 2:
        return (float(value[0]), float(value[1]))
    _fail(f"{where}: expected a number or [mean, sd] pair, got {value!r}")


def _parse_dgp(cfg: dict) -> DgpConfig:
    if "dgp" not in cfg:
        _fail("config: missing 'dgp' section")
    d = cfg["dgp"]
    try:
        blocks = int(d["blocks"])
        raw_size = d["block_size"]
        raw_strata = d["strata"]
    except KeyError as exc:
        _fail(f"config dgp: missing key {exc}")
    size = tuple(int(x) for x in raw_size) if isinstance(raw_size, list) else int(raw_size)
    if isinstance(raw_strata, dict):
        unknown = set(raw_strata) - set(_STRATA_KEYS)
        if unknown:
            _fail(f"config dgp.strata: unknown strata {sorted(unknown)}")
        strata = tuple(float(raw_strata.get(k, 0.0)) for k in _STRATA_KEYS)
    else:
        strata = tuple(float(x) for x in raw_strata)
    oc = d.get("outcome", {})
    outcome = OutcomeConfig(
        representation=oc.get("representation", "structural"),
        intercept=_parse_param(oc.get("intercept", 0.0), "dgp.outcome.intercept"),
        direct=_parse_param(oc.get("direct", 0.0), "dgp.outcome.direct"),
        peer=_parse_param(oc.get("peer", 0.0), "dgp.outcome.peer"),
        interaction=_parse_param(oc.get("interaction", 0.0), "dgp.outcome.interaction"),
        curvature=_parse_param(oc.get("curvature", 0.0), "dgp.outcome.curvature"),
        noise_sd=float(oc.get("noise_sd", 0.0)),
        z_own=float(oc.get("z_own", 0.0)),
        z_peer=float(oc.get("z_peer", 0.0)),
    )
    return DgpConfig(
        blocks=blocks,
        block_size=size,
        strata=strata,
        outcome=outcome,
        monotone=d.get("monotone"),
        one_sided=d.get("one_sided"),
        complier_floor=bool(d.get("complier_floor", True)),
    )


def _parse_mechanisms(cfg: dict) -> dict[str, Mechanism]:
    raw = cfg.get("mechanisms")
    if not raw:
        _fail("config: missing 'mechanisms' list")
    mechs: dict[str, Mechanism] = {}
    for i, m in enumerate(raw):
        name = m.get("name")
        if not name:
            _fail(f"config mechanisms[{i}]: missing name")
        if name in mechs:
            _fail(f"config mechanisms: {name!r} defined more than once")
        if "p" in m:
            mechs[name] = Mechanism(name=name, probs=float(m["p"]))
        elif "probs" in m:
            mechs[name] = Mechanism(name=name, probs=tuple(float(x) for x in m["probs"]))
        else:
            _fail(f"config mechanisms[{i}] ({name!r}): needs 'p' or 'probs'")
    return mechs


def _resolve_seed(cli_seed, section: dict, cfg: dict) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    for holder in (section, cfg):
        if "seed" in holder:
            return int(holder["seed"])
    _fail("config: missing seed (set a top-level \"seed\" or pass --seed)")


def _design_pair(cfg: dict, mechs: dict[str, Mechanism]) -> tuple[Mechanism, Mechanism, dict]:
    d = cfg.get("design", {})
    names = list(mechs)
    a_name = d.get("mech_a", names[0] if names else None)
    b_name = d.get("mech_b", names[1] if len(names) > 1 else None)
    for label, name in (("mech_a", a_name), ("mech_b", b_name)):
        if name is None or name not in mechs:
            _fail(f"config design.{label}: mechanism {name!r} is not defined")
    return mechs[a_name], mechs[b_name], d


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, int(args.threads))
    env = os.environ.get("PEERENC_THREADS")
    return max(1, int(env)) if env else 1


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def cmd_generate(args) -> int:
    cfg = _load_json(args.config)
    seed = _resolve_seed(args.seed, cfg.get("dgp", {}), cfg)
    dgp = _parse_dgp(cfg)
    pop = build_population(dgp, _streams.stream(seed, _DGP_STREAM))
    report = validate(pop)
    out = args.out or cfg.get("output", {}).get("path") or "population.json"
    save_population(pop, out)
    print(f"wrote {out}")
    for line in report.summary_lines():
        print(line)
    return 0


def cmd_estimands(args) -> int:
    cfg = _load_json(args.config)
    mechs = _parse_mechanisms(cfg)
    mech_a, mech_b, _ = _design_pair(cfg, mechs)
    pop = load_population(args.pop)
    report = compute_estimand_report(pop, mech_a, mech_b)
    if args.format == "csv":
        _emit(report.to_csv(), args.out)
    elif args.format == "text":
        lines = [f"{k:<44}{v.population:>16.8g}" for k, v in report.entries.items()]
        lines += [f"skipped {k}: {v}" for k, v in report.skipped.items()]
        _emit("\n".join(lines), args.out)
    else:
        _emit(report.to_json(), args.out)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    mechs = _parse_mechanisms(cfg)
    mech_a, mech_b, design_section = _design_pair(cfg, mechs)
    mc_section = cfg.get("mc", {})
    seed = _resolve_seed(args.seed, design_section, cfg)
    pop = load_population(args.pop)
    k = int(design_section.get("k", pop.n_blocks // 2))
    dcfg = DesignConfig(mech_a=mech_a, mech_b=mech_b, k=k, seed=seed)
    if args.dump_data:
        run_design(pop, dcfg, replicate=0).to_csv(args.dump_data)
    r = int(mc_section.get("replications", 1000))
    summary = replicate(pop, dcfg, r, threads=_threads(args))
    if args.format == "text":
        _emit(summary.text_table(), args.out)
    else:
        _emit(summary.to_json(), args.out)
    return 0


def cmd_verify(args) -> int:
    cfg = _load_json(args.config)
    mechs = _parse_mechanisms(cfg)
    mech_a, mech_b, design_section = _design_pair(cfg, mechs)
    mc_section = cfg.get("mc", {})
    seed = _resolve_seed(args.seed, mc_section, cfg)
    pop = load_population(args.pop)
    r = int(mc_section.get("replications", 0))
    k = design_section.get("k")
    report = verify_theorems(
        pop, mech_a, mech_b, replications=r, seed=seed,
        k=int(k) if k is not None else None, threads=_threads(args),
    )
    if args.format == "text":
        _emit(report.text_table(), args.out)
    else:
        _emit(report.to_json(), args.out)
    ok = verification_passes(report, expect_fail=set(args.expect_fail or ()))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peerenc",
        description="Peer encouragement designs: exact estimands, protocol simulation, "
        "and verification of the identification identities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, pop=False):
        p.add_argument("--config", required=True, help="JSON run configuration")
        if pop:
            p.add_argument("--pop", required=True, help="population JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    g = sub.add_parser("generate", help="build and validate a synthetic population")
    common(g)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimands", help="exact estimand report for a population")
    common(e, pop=True)
    e.add_argument("--format", choices=("json", "csv", "text"), default="json")
    e.set_defaults(func=cmd_estimands)

    s = sub.add_parser("simulate", help="replicate the design and summarize estimators")
    common(s, pop=True)
    s.add_argument("--format", choices=("json", "text"), default="json")
    s.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: PEERENC_THREADS or 1)")
    s.add_argument("--dump-data", default=None, help="write replicate 0 as CSV")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="check the identification identities")
    common(v, pop=True)
    v.add_argument("--format", choices=("json", "text"), default="json")
    v.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: PEERENC_THREADS or 1)")
    v.add_argument("--expect-fail", nargs="*", choices=("thm1", "thm2", "thm3"),
                   default=None, help="theorems that must fail (negative tests)")
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PeerEncError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
