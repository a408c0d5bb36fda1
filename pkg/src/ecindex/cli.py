"""Command-line entry point: ``ecindex {simulate,evaluate,sweep,report}``.

Every command writes ``manifest.json`` to ``--out`` before anything else. If a
command fails, the result files it already wrote are deleted and the manifest
records the failure. Exit codes: 0 ok, 1 runtime failure, 2 config or input
validation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import fields
from importlib import metadata
from pathlib import Path

import jsonschema

from .core import CohortError, read_cohort_csv, write_cohort_csv
from .coxfit import CoxOptions
from .evalharness import StudyConfig, run_study, split_sweep, sweep_argmin
from .simulate import SimulationConfig, generate_cohort

log = logging.getLogger("ecindex")

THREADS_ENV = "ECINDEX_THREADS"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

_summary = {
    "type": "object",
    "required": ["values", "mean", "sd", "ci95"],
    "properties": {
        "values": {"type": "array", "items": {"type": "number"}},
        "mean": {"type": "number"},
        "sd": {"type": "number", "minimum": 0},
        "ci95": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    },
}
_nullable_number = {"type": ["number", "null"]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ecindex study report",
    "type": "object",
    "required": ["tool_version", "cohort", "config", "reports", "summaries"],
    "properties": {
        "tool_version": {"type": "string"},
        "cohort": {
            "type": "object",
            "required": ["path", "m", "events", "group_levels"],
            "properties": {
                "path": {"type": "string"},
                "m": {"type": "integer", "minimum": 1},
                "events": {"type": "integer", "minimum": 0},
                "group_levels": {"type": "array", "items": {"type": "string"}},
                "dropped": {"type": "object"},
            },
        },
        "config": {"type": "object"},
        "notes": {"type": "array", "items": {"type": "string"}},
        "reports": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["ci", "eci", "dr", "pair_count", "per_group", "replicate"],
                "properties": {
                    "ci": {"type": "number", "minimum": 0, "maximum": 1},
                    "eci": {"type": "number", "minimum": 0, "maximum": 1},
                    "dr": _nullable_number,
                    "pair_count": {"type": "integer", "minimum": 1},
                    "replicate": {"type": "integer", "minimum": 0},
                    "per_group": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "object",
                            "required": ["subci", "subeci", "subdr", "within_subci", "pair_count"],
                            "properties": {
                                "subci": {"type": "number"},
                                "subeci": {"type": "number"},
                                "subdr": _nullable_number,
                                "within_subci": _nullable_number,
                                "pair_count": {"type": "integer", "minimum": 0},
                                "within_pair_count": {"type": "integer", "minimum": 0},
                            },
                        },
                    },
                    "extras": {"type": "object"},
                },
            },
        },
        "summaries": {
            "type": "object",
            "required": ["ci", "eci", "dr", "groups"],
            "properties": {
                "ci": _summary,
                "eci": _summary,
                "dr": _nullable_number,
                "groups": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "required": ["subci", "subeci", "subdr", "sign_p", "mann_whitney_p"],
                        "properties": {
                            "subci": _summary,
                            "subeci": _summary,
                            "subdr": _nullable_number,
                            "sign_p": {"type": "number", "minimum": 0, "maximum": 1},
                            "mann_whitney_p": {"type": "number", "minimum": 0, "maximum": 1},
                        },
                    },
                },
            },
        },
    },
}


class ConfigError(ValueError):
    """Bad config file, flags or input data; exit code 2."""


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# --- output bookkeeping -------------------------------------------------------


class Outputs:
    """Tracks files written by one command so a failure can remove them."""

    def __init__(self, out_dir: Path, manifest: dict):
        self.dir = out_dir
        self.manifest = manifest
        self.written: list[Path] = []
        self.dir.mkdir(parents=True, exist_ok=True)
        self._write_manifest("running")

    def _write_manifest(self, status: str, error: str | None = None):
        body = {**self.manifest, "status": status, "outputs": [p.name for p in self.written]}
        if error is not None:
            body["error"] = error
        (self.dir / "manifest.json").write_text(json.dumps(body, indent=2) + "\n")

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.written.append(p)
        return p

    def write_text(self, name: str, text: str):
        self.path(name).write_text(text)

    def write_json(self, name: str, obj):
        self.write_text(name, json.dumps(obj, indent=2, allow_nan=False) + "\n")

    def commit(self):
        self._write_manifest("ok")

    def rollback(self, error: str):
        for p in self.written:
            p.unlink(missing_ok=True)
        self.written = []
        self._write_manifest("failed", error)


# --- config loading ----------------------------------------------------------


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return d


def load_simulation_config(path, seed: int | None = None) -> SimulationConfig:
    d = _load_json(path)
    if seed is not None:
        d["seed"] = seed
    try:
        return SimulationConfig.from_dict(d)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


STUDY_KEYS = {f.name for f in fields(StudyConfig)}


def load_study_config(path, seed=None, threads=None) -> tuple[StudyConfig, CoxOptions, dict]:
    """Study settings plus Cox options and CSV range filters from one JSON file.

    Recognised top-level keys are the :class:`StudyConfig` fields, ``cox``
    (a :class:`CoxOptions` mapping) and ``range_filters`` (column -> [min, max]).
    """
    d = _load_json(path) if path else {}
    extra = set(d) - STUDY_KEYS - {"cox", "range_filters"}
    if extra:
        raise ConfigError(f"unknown config fields: {sorted(extra)}")
    study = {k: v for k, v in d.items() if k in STUDY_KEYS}
    if seed is not None:
        study["seed"] = seed
    if threads is not None:
        study["threads"] = threads
    try:
        cfg = StudyConfig(**study)
        cox = CoxOptions(**d.get("cox", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    filters = {}
    for col, bounds in (d.get("range_filters") or {}).items():
        if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
            raise ConfigError(f"range filter for {col!r} must be [min, max]")
        filters[col] = tuple(bounds)
    return cfg, cox, filters


def _threads(flag: int | None) -> int | None:
    if flag is not None:
        value, source = flag, "--threads"
    elif os.environ.get(THREADS_ENV):
        value, source = os.environ[THREADS_ENV], THREADS_ENV
    else:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"{source} must be an integer") from None
    if n < 1:
        raise ConfigError(f"{source} must be >= 1")
    return n


def _read_cohort(path, filters):
    try:
        return read_cohort_csv(path, range_filters=filters)
    except OSError as exc:
        raise ConfigError(f"cannot read cohort {path}: {exc.strerror}") from None
    except CohortError as exc:
        raise ConfigError(str(exc)) from None


# --- rendering -----------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else f"{x:.3f}"


def _pct(x) -> str:
    return "n/a" if x is None else f"{100 * x:.2f}%"


def _with_ci(s: dict) -> str:
    lo, hi = s["ci95"]
    return f"{s['mean']:.3f} ({lo:.3f},{hi:.3f})"


SUMMARY_COLUMNS = ["metric", "group", "mean", "sd", "ci_lo", "ci_hi"]


def summary_rows(summaries: dict) -> list[dict]:
    """One row per metric; every number rounded to 3 decimals."""

    def row(metric, group, s):
        if s is None:
            return None
        if isinstance(s, dict):
            lo, hi = s["ci95"]
            vals = [s["mean"], s["sd"], lo, hi]
        else:
            vals = [s, None, None, None]
        return dict(zip(SUMMARY_COLUMNS, [metric, group, *(_fmt(v) for v in vals)]))

    rows = [row("ci", "", summaries["ci"]), row("eci", "", summaries["eci"]), row("dr", "", summaries["dr"])]
    for g, gs in summaries["groups"].items():
        rows += [
            row("subci", g, gs["subci"]),
            row("subeci", g, gs["subeci"]),
            row("subdr", g, gs["subdr"]),
            row("within_subci", g, gs.get("within_subci")),
        ]
    return [r for r in rows if r is not None]


def render_summary_csv(summaries: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(summary_rows(summaries))
    return buf.getvalue()


def render_tables(summaries: dict, scenario: str = "") -> str:
    """Markdown tables: the overall row, then one row per subgroup.

    In the subgroup table, a section sign marks a significant sign test and a
    dagger a significant Mann-Whitney test (SUBCI vs CI, p < 0.05).
    """
    name = scenario or "all"
    lines = [
        "| Scenario | CI(M^) | E[CI(M*)] | DR(M^,M*) |",
        "|---|---|---|---|",
        f"| {name} | {_with_ci(summaries['ci'])} | {_with_ci(summaries['eci'])} | {_pct(summaries['dr'])} |",
    ]
    groups = summaries["groups"]
    if groups:
        lines += [
            "",
            "| Scenario | Group (l) | SUBCI(l,M^) | E[SUBCI(l,M*)] | SUBDR(l,M^,M*) |",
            "|---|---|---|---|---|",
        ]
        for g, gs in groups.items():
            mark = ("§" if gs["sign_significant"] else "") + ("†" if gs["mann_whitney_significant"] else "")
            lines.append(
                f"| {name} | {g} | {_with_ci(gs['subci'])}{mark} | {_with_ci(gs['subeci'])} | {_pct(gs['subdr'])} |"
            )
        lines += ["", "§ sign test, † Mann-Whitney test: SUBCI differs from CI at p < 0.05."]
    return "\n".join(lines) + "\n"


def render_sweep(sweep: dict) -> tuple[str, str]:
    best = sweep_argmin(sweep)
    rows = ["fraction,eci_mean,eci_sd,argmin"]
    md = ["| D^ret fraction | E[CI(M*)] mean | sd | |", "|---|---|---|---|"]
    for f in sorted(sweep):
        s = sweep[f]
        flag = f == best
        rows.append(f"{f!r},{s.mean!r},{s.sd!r},{int(flag)}")
        md.append(f"| {f:g} | {s.mean:.3f} | {s.sd:.5f} | {'minimum sd' if flag else ''} |")
    return "\n".join(rows) + "\n", "\n".join(md) + "\n"


# --- commands ------------------------------------------------------------------


def cmd_simulate(args, out: Outputs):
    cfg = args.sim_config
    bundle = generate_cohort(cfg)
    write_cohort_csv(bundle.cohort, out.path("cohort.csv"))
    out.write_json("truth.json", {"config": cfg.to_dict(), **bundle.to_dict()})


def _report_body(args, cohort, result) -> dict:
    body = {
        "tool_version": tool_version(),
        "cohort": {
            "path": str(args.cohort),
            "m": cohort.m,
            "events": int(cohort.event.sum()),
            "group_levels": [str(g) for g in cohort.group_levels],
            "dropped": dict(cohort.dropped),
        },
        **result.to_dict(),
    }
    jsonschema.validate(body, REPORT_SCHEMA)
    return body


def _emit_report(out: Outputs, body: dict):
    out.write_json("report.json", body)
    out.write_text("summary.csv", render_summary_csv(body["summaries"]))
    out.write_text("tables.md", render_tables(body["summaries"], body["config"].get("scenario", "")))


def cmd_evaluate(args, out: Outputs):
    cohort = args.cohort_data
    result = run_study(cohort, args.study, args.cox)
    _emit_report(out, _report_body(args, cohort, result))


def cmd_sweep(args, out: Outputs):
    sweep = split_sweep(
        args.cohort_data, args.fraction_list, args.study.replicates, args.study.seed, args.study, args.cox
    )
    csv_text, md = render_sweep(sweep)
    out.write_text("sweep.csv", csv_text)
    out.write_text("sweep.md", md)


def cmd_report(args, out: Outputs):
    body = args.report_body
    _emit_report(out, body)


def _parse_fractions(text: str) -> list[float]:
    try:
        fr = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad fraction list {text!r}") from None
    if not fr:
        raise ConfigError("empty fraction list")
    if len(set(fr)) != len(fr):
        raise ConfigError("duplicate fractions")
    if any(not 0 < f < 1 for f in fr):
        raise ConfigError("fractions must lie in (0, 1)")
    return fr


def _prepare(args):
    """Load and validate all inputs; every failure here is a config error."""
    threads = _threads(args.threads)
    if args.command == "simulate":
        args.sim_config = load_simulation_config(args.config, args.seed)
        return args.sim_config.seed
    if args.command == "report":
        body = _load_json(args.report)
        try:
            jsonschema.validate(body, REPORT_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"{args.report}: {exc.message}") from None
        args.report_body = body
        return body["config"].get("seed")
    args.study, args.cox, filters = load_study_config(args.config, args.seed, threads)
    if args.command == "sweep":
        args.fraction_list = _parse_fractions(args.fractions)
    args.cohort_data = _read_cohort(args.cohort, filters)
    return args.study.seed


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecindex", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, help=f"replicate threads (default: ${THREADS_ENV} or 1)")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("simulate", help="draw a synthetic cohort"), True)
    ev = sub.add_parser("evaluate", help="repeated-split study on a cohort CSV")
    common(ev, False)
    ev.add_argument("--cohort", required=True)
    sw = sub.add_parser("sweep", help="sd of the expected C-Index across split fractions")
    common(sw, False)
    sw.add_argument("--cohort", required=True)
    sw.add_argument("--fractions", default="0.2,0.3,0.4,0.5,0.6,0.7,0.8")
    rp = sub.add_parser("report", help="re-render summary.csv and tables.md from report.json")
    common(rp, False)
    rp.add_argument("--report", required=True)
    return p


COMMANDS = {"simulate": cmd_simulate, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    manifest = {
        "command": args.command,
        "config_path": str(Path(args.config).resolve()) if args.config else None,
        "seed": args.seed,
        "output_dir": str(Path(args.out).resolve()),
        "tool_version": tool_version(),
    }
    try:
        out = Outputs(Path(args.out), manifest)
    except OSError as exc:
        print(f"ecindex: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        seed = _prepare(args)
    except ConfigError as exc:
        out.rollback(str(exc))
        print(f"ecindex: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.manifest["seed"] = seed

    try:
        COMMANDS[args.command](args, out)
    except Exception as exc:  # any failure past validation is a runtime failure
        log.debug("failure", exc_info=True)
        out.rollback(f"{type(exc).__name__}: {exc}")
        print(f"ecindex: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out.commit()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
