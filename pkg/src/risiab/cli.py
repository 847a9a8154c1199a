"""Command-line entry point: load a scenario, run its sweep, write a table.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import replace

from . import __version__
from .config import PRESETS, RunConfig, SweepSpec, dump_document, load, load_preset, to_document
from .errors import ConfigError, InvalidParameterError, InvariantError
from .montecarlo import AXES, VARIANTS, run_sweep, run_variants, worker_count

log = logging.getLogger("risiab")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4
COLUMNS = ("axis", "value", "series", "series_value", "variant", "rho_hat", "ci_low",
           "ci_high", "trials", "ue_samples", "mean_rate_bps")


def parse_values(text: str) -> tuple[float, ...]:
    """``"0,25,50"`` or an inclusive range ``"start:stop:step"``."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise ConfigError(f"bad range {text!r}: need step > 0 and stop >= start")
            n = round((stop - start) / step)
            if not math.isclose(start + n * step, stop, rel_tol=1e-9, abs_tol=1e-9):
                raise ConfigError(f"range {text!r} does not land on its stop value")
            return tuple(start + i * step for i in range(n + 1))
        values = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"cannot parse values {text!r}") from None
    if not values:
        raise ConfigError("--values needs at least one number")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="risiab",
        description="Service-coverage sweeps for mmWave IAB networks with RIS/NCR backhaul.",
        epilog="Worker processes: set RISIAB_WORKERS (default: CPU count).")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="YAML scenario file")
    src.add_argument("--preset", choices=PRESETS, help="built-in scenario template")
    p.add_argument("--seed", type=int, help="master seed (0 <= seed < 2**64)")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per estimate")
    p.add_argument("--sweep", choices=AXES, help="swept parameter")
    p.add_argument("--values", help="sweep values, 'a,b,c' or 'start:stop:step'")
    p.add_argument("--variants", help=f"comma list from {', '.join(VARIANTS)}")
    p.add_argument("--output", help="result table path (default: stdout)")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved scenario as YAML and exit")
    p.add_argument("--log-level", default="WARNING",
                   choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def apply_overrides(cfg: RunConfig, args) -> tuple[RunConfig, dict]:
    """Command-line values beat file values; returns the overrides applied."""
    s, sweep, done = cfg.scenario, cfg.sweep, {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must lie in [0, 2**64)")
        s, done["seed"] = replace(s, seed=args.seed), args.seed
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        s, done["trials"] = replace(s, trials=args.trials), args.trials
    if args.sweep is not None or args.values is not None:
        axis = args.sweep or (sweep.axis if sweep else None)
        if axis is None:
            raise ConfigError("--values needs --sweep when the config has no sweep")
        if args.values is not None:
            values = parse_values(args.values)
        elif sweep is not None and sweep.axis == axis:
            values = sweep.values
        else:
            raise ConfigError(f"--sweep {axis} needs --values")
        base = sweep or SweepSpec(axis, values)
        series = (base.series_axis, base.series_values)
        if series[0] == axis:
            series = (None, ())
        sweep = SweepSpec(axis, values, base.variants, *series)
        done["sweep"] = {"axis": axis, "values": list(values)}
    if args.variants is not None:
        variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
        bad = [v for v in variants if v not in VARIANTS]
        if bad or not variants:
            raise ConfigError(f"--variants must be drawn from {', '.join(VARIANTS)}")
        if sweep is not None:
            sweep = replace(sweep, variants=variants)
        done["variants"] = list(variants)
    return RunConfig(s, sweep, cfg.source), done


def execute(cfg: RunConfig, variants=None):
    s, sw = cfg.scenario, cfg.sweep
    if sw is None:
        return run_variants(s, variants) if variants else run_variants(s)
    return run_sweep(s, sw.axis, sw.values, sw.variants, series=sw.series)


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else format(x, ".10g")


def format_table(cfg: RunConfig, rows) -> str:
    """Result table with a ``#``-prefixed provenance header.

    Stripping the ``# `` prefixes of the header gives a scenario document
    that reproduces the run.
    """
    lines = [f"# risiab {__version__} result table; header lines hold the resolved scenario"]
    lines += ["# " + ln for ln in dump_document(cfg).splitlines()]
    lines.append(",".join(COLUMNS))
    for r in rows:
        e = r.estimate
        lines.append(",".join([
            r.axis, _num(r.value), r.series, _num(r.series_value), r.variant,
            f"{e.rho_hat:.6f}", f"{e.ci_low:.6f}", f"{e.ci_high:.6f}",
            str(e.trials), str(e.ue_samples),
            "nan" if math.isnan(e.mean_rate) else f"{e.mean_rate:.6e}",
        ]))
    return "\n".join(lines) + "\n"


def _stage(path: str, text: str) -> str:
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".risiab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except BaseException:
        os.unlink(tmp)
        raise
    return tmp


def write_outputs(files: dict):
    """Write every ``path -> text`` or none of them."""
    staged = {}
    try:
        for path, text in files.items():
            staged[path] = _stage(path, text)
        placed = []
        try:
            for path, tmp in staged.items():
                os.replace(tmp, path)
                placed.append(path)
        except BaseException:
            for path in placed:
                os.unlink(path)
            raise
    finally:
        for tmp in staged.values():
            if os.path.exists(tmp):
                os.unlink(tmp)


def manifest_path(output: str) -> str:
    return output + ".manifest.json"


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load(args.config)
        elif args.preset:
            cfg = load_preset(args.preset)
        else:
            raise ConfigError("give --config PATH or --preset NAME")
        cfg, overrides = apply_overrides(cfg, args)
        if args.print_config:
            text = dump_document(cfg)
            if args.output:
                write_outputs({args.output: text})
            else:
                sys.stdout.write(text)
            return EXIT_OK

        variants = overrides.get("variants") if cfg.sweep is None else None
        log.info("running %s: %d trials, seed %d, %d worker(s)", cfg.source,
                 cfg.scenario.trials, cfg.scenario.seed, worker_count())
        start = time.perf_counter()
        rows = execute(cfg, variants)
        wall = time.perf_counter() - start
        # timing stays out of the files so reruns are byte-identical
        log.info("finished %d rows in %.1f s on %d worker(s)", len(rows), wall, worker_count())
        table = format_table(cfg, rows)
        if args.output:
            manifest = {
                "version": __version__,
                "source": cfg.source,
                "seed": cfg.scenario.seed,
                "trials": cfg.scenario.trials,
                "overrides": overrides,
                "rows": len(rows),
                "table": os.path.basename(args.output),
                "config": to_document(cfg),
            }
            write_outputs({args.output: table,
                           manifest_path(args.output): json.dumps(manifest, indent=2) + "\n"})
        else:
            sys.stdout.write(table)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except InvalidParameterError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except InvariantError as exc:
        log.error("internal invariant violated: %s", exc)
        return EXIT_INVARIANT
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
