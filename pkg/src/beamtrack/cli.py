"""Command-line front end: ``beamtrack design | simulate | sweep``.

Exit status is 0 when every output was written and read back, 2 for invalid
configs or arguments, and 1 for any other failure. Outputs are written
through temporary files and renamed into place; on failure everything
written so far is removed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .codebook import (Codebook, FitnessEvaluator, FitnessParams, codebook_to_dict,
                       evolve_awv, load_codebook, pencil_codebook, wide_codebook)
from .config import (ConfigError, ExperimentConfig, codebook_spec, load_config,
                     scenario_config, with_overrides)
from .sim import build_codebook, run, sweep_beamwidth

log = logging.getLogger("beamtrack")

TRACE_COLUMNS = ("t_s", "x_m", "y_m", "phi_deg", "snr_db", "beam_index", "action", "ess")
PF_TRACE_COLUMNS = ("time_s", "theta_true_deg", "theta_hat_deg", "ess", "beam_index", "snr_db", "action")
SWEEP_COLUMNS = ("label", "beamwidth_deg", "static_snr_db", "dynamic_snr_db", "trn_per_s", "trn_per_s_pf")


class UsageError(Exception):
    """Bad command-line input (exit status 2)."""


def _num(x) -> str:
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the clock for reproducible manifests
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


class OutputSet:
    """Files of one invocation, written atomically and removable as a group."""

    def __init__(self):
        self.paths: dict[str, Path] = {}

    def _commit(self, role: str, path: Path, tmp: Path) -> Path:
        os.replace(tmp, path)
        self.paths[role] = path
        return path

    def text(self, role: str, path, content: str) -> Path:
        path = Path(path)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(content)
        return self._commit(role, path, tmp)

    def figure(self, role: str, path, draw, *args, **kwargs) -> Path:
        path = Path(path)
        tmp = path.with_name(f".{path.name}.tmp")
        try:
            draw(*args, path=tmp, **kwargs)
        except Exception:
            tmp.unlink(missing_ok=True)
            raise
        return self._commit(role, path, tmp)

    def discard(self) -> None:
        for p in self.paths.values():
            p.unlink(missing_ok=True)
        self.paths.clear()

    def manifest(self, path, command: str, cfg: ExperimentConfig, started: str) -> Path:
        path = Path(path)
        base = path.parent
        outputs = {
            role: {"path": os.path.relpath(p, base),
                   "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
            for role, p in sorted(self.paths.items())
        }
        doc = {
            "tool": "beamtrack",
            "version": __version__,
            "command": command,
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "started_utc": started,
            "finished_utc": _timestamp(),
            "outputs": outputs,
        }
        return self.text("manifest", path, _json_text(doc))


def _check_csv(path: Path, columns, n_rows: int) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != tuple(columns) or len(rows) - 1 != n_rows:
        raise RuntimeError(f"{path} failed read-back validation")


def _check_json(path: Path) -> dict:
    return json.loads(path.read_text())


# -- codebooks ----------------------------------------------------------------

def _design(cfg: ExperimentConfig) -> tuple[Codebook, list[dict]]:
    """Codebook described by the config and per-design fitness breakdowns."""
    spec = codebook_spec(cfg)
    geom = scenario_config(cfg).ap_geometry
    if spec.kind == "pencil":
        return pencil_codebook(geom, spec.n_beams or geom.n_elements), []
    if spec.per_center:
        cb = wide_codebook(geom, spec.beamwidth, FitnessParams(spec.beamwidth, 0.0, spec.beta1,
                                                               spec.beta2, spec.grid_step),
                           spec.evolution, per_center=True)
        reports = []
        for e in cb:
            ev = FitnessEvaluator(geom, FitnessParams(spec.beamwidth, e.center, spec.beta1,
                                                      spec.beta2, spec.grid_step))
            terms = ev.terms(e.awv)
            reports.append(_fitness_report(np.rad2deg(e.center), float(ev.combine(terms)), terms))
        return cb, reports
    params = FitnessParams(spec.beamwidth, 0.0, spec.beta1, spec.beta2, spec.grid_step)
    res = evolve_awv(geom, params, spec.evolution)
    cb = wide_codebook(geom, spec.beamwidth, params, spec.evolution, prototype=res.awv)
    report = _fitness_report(0.0, res.fitness, res.terms)
    report["iterations"] = res.iterations
    return cb, [report]


def _fitness_report(center_deg: float, value: float, terms) -> dict:
    f1, f2, f3 = (float(t) for t in terms)
    return {"center_deg": float(center_deg), "fitness": float(value), "f1": f1, "f2": f2, "f3": f3}


def _codebook_for_run(cfg: ExperimentConfig, override: str | None) -> Codebook:
    path = override or cfg.codebook.file
    if path:
        try:
            return load_codebook(path)
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot load codebook {path}: {exc}") from None
    return build_codebook(codebook_spec(cfg), scenario_config(cfg).ap_geometry)


# -- subcommands --------------------------------------------------------------

def cmd_design(cfg: ExperimentConfig, out: Path, figures: bool, outputs: OutputSet) -> None:
    started = _timestamp()
    cb, reports = _design(cfg)
    outputs.text("codebook", out, _json_text(codebook_to_dict(cb)))
    if len(load_codebook(out)) != len(cb):
        raise RuntimeError(f"{out} failed read-back validation")
    if figures:
        from .plotting import plot_codebook
        outputs.figure("pattern", out.with_name(out.stem + "_pattern.png"), plot_codebook, cb)
    outputs.manifest(out.with_name(out.stem + ".manifest.json"), "design", cfg, started)

    print(f"codebook: {len(cb)} entries -> {out}")
    for r in reports:
        print(f"center {r['center_deg']:+.2f} deg  fitness {r['fitness']:.6f}  "
              f"F1 {r['f1']:.6f}  F2 {r['f2']:.6f}  F3 {r['f3']:.6f}")


def cmd_simulate(cfg: ExperimentConfig, out: Path, figures: bool, outputs: OutputSet,
                 codebook_path: str | None = None) -> None:
    started = _timestamp()
    scenario = scenario_config(cfg)
    cb = _codebook_for_run(cfg, codebook_path)
    m = run(scenario, cb)
    out.mkdir(parents=True, exist_ok=True)

    summary = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "static": scenario.static,
        "codebook_entries": len(cb),
        "codebook_beamwidth_deg": float(np.rad2deg(cb[0].beamwidth)),
        "aligned_avg_snr_db": float(np.mean(m.aligned_snr_db)),
        **m.summary(),
    }
    outputs.text("summary", out / "summary.json", _json_text(summary))
    rows = [(_num(t), _num(x), _num(y), _num(np.rad2deg(p)), _num(s), int(b), a, _num(e))
            for t, x, y, p, s, b, a, e in zip(m.t_s, m.x_m, m.y_m, m.phi, m.snr_db,
                                               m.beam_index, m.action, m.ess)]
    outputs.text("trace", out / "trace.csv", _csv_text(TRACE_COLUMNS, rows))
    _check_csv(out / "trace.csv", TRACE_COLUMNS, len(m.t_s))
    _check_json(out / "summary.json")
    if cfg.mode == "pf":
        pf_rows = [(_num(t), _num(np.rad2deg(p)), _num(np.rad2deg(h)), _num(e), int(b), _num(s), a)
                   for t, p, h, e, b, s, a in zip(m.t_s, m.phi, m.theta_hat, m.ess, m.beam_index,
                                                  m.snr_db, m.action)]
        outputs.text("pf_trace", out / "pf_trace.csv", _csv_text(PF_TRACE_COLUMNS, pf_rows))
        _check_csv(out / "pf_trace.csv", PF_TRACE_COLUMNS, len(m.t_s))
    if figures:
        from .plotting import plot_run
        outputs.figure("snr_figure", out / "snr.png", plot_run, m,
                       label=f"{cfg.mode.upper()} mode, seed {cfg.seed}")
    outputs.manifest(out / "manifest.json", "simulate", cfg, started)
    print(_json_text(summary), end="")


def cmd_sweep(cfg: ExperimentConfig, out: Path, figures: bool, outputs: OutputSet,
              beamwidths: list[float] | None = None) -> None:
    started = _timestamp()
    widths = cfg.sweep.beamwidths_deg if beamwidths is None else beamwidths
    if not widths:
        raise UsageError("beamwidth list is empty")
    scenario = scenario_config(cfg)
    rows = sweep_beamwidth(scenario, widths, with_pf=cfg.sweep.with_pf)
    out.mkdir(parents=True, exist_ok=True)
    table = [(r.label, _num(r.beamwidth_deg), _num(r.static_snr_db), _num(r.dynamic_snr_db),
              _num(r.trn_per_s), _num(r.trn_per_s_pf)) for r in rows]
    outputs.text("table", out / "sweep.csv", _csv_text(SWEEP_COLUMNS, table))
    _check_csv(out / "sweep.csv", SWEEP_COLUMNS, len(rows))
    if figures:
        from .plotting import plot_sweep
        outputs.figure("figure", out / "sweep.png", plot_sweep, rows)
    outputs.manifest(out / "manifest.json", "sweep", cfg, started)
    print(_csv_text(SWEEP_COLUMNS, table), end="")


# -- entry point --------------------------------------------------------------

def _parse_widths(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamtrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"beamtrack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", required=True, help="YAML or JSON experiment config")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--mode", choices=("trn", "pf"), help="override the tracking mode")
        p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")

    common(sub.add_parser("design", help="design a codebook"), "codebook JSON file")
    p = sub.add_parser("simulate", help="run one scenario")
    common(p, "output directory")
    p.add_argument("--codebook", help="use this codebook file instead of designing one")
    p = sub.add_parser("sweep", help="compare beamwidths against the pencil baseline")
    common(p, "output directory")
    p.add_argument("--beamwidths", type=_parse_widths, help="comma-separated widths in degrees")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("BEAMTRACK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    outputs = OutputSet()
    try:
        cfg = with_overrides(load_config(args.config), seed=args.seed, mode=args.mode)
        scenario_config(cfg)  # surface scenario-level errors before any work
        out = Path(args.out)
        figures = not args.no_figures
        if args.command == "design":
            out.parent.mkdir(parents=True, exist_ok=True)
            cmd_design(cfg, out, figures, outputs)
        elif args.command == "simulate":
            cmd_simulate(cfg, out, figures, outputs, args.codebook)
        else:
            cmd_sweep(cfg, out, figures, outputs, args.beamwidths)
    except ConfigError as exc:
        outputs.discard()
        print(f"beamtrack: invalid config field '{exc.field}': {exc.message}", file=sys.stderr)
        return 2
    except (UsageError, FileNotFoundError, IsADirectoryError) as exc:
        outputs.discard()
        print(f"beamtrack: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, clean up, fail
        outputs.discard()
        log.debug("failure", exc_info=True)
        print(f"beamtrack: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
