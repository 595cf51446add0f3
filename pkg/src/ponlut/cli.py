"""Batch front-end: LUT builds, parameter sweeps and preamble searches from a config file."""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import sys
from dataclasses import dataclass
from typing import Callable

from . import __version__
from .burstline import (BaselineUnresolved, BurstPlan, LinkChain, LutMissing, RxMode,
                        EqSettings, SweepGrid, build_lut, grid_onu, min_preamble, sweep)
from .cdr import CdrConfig
from .channel import ChannelConfig, NoiseModel, OnuProfile, PhaseModelParams, launch_rop
from .dspcore import ParameterError
from .lutstore import LutFormatError, LutVersionError, TrainingError, dumps, load
from .txdsp import get_format

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_TRAINING = 5
EXIT_BASELINE = 6
EXIT_LUT_MISSING = 7

SWEEP_KINDS = ("ber-vs-preamble", "lock-vs-rop", "ber-vs-rop")
CSV_COLUMNS = ("format", "mode", "distance_km", "rop_dbm", "preamble_len", "seed",
               "ber", "errors", "bits", "lock_index", "eq_converged")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() == "none" else float(text)


def _list(item: Callable) -> Callable:
    def parse(text: str):
        parts = [p.strip() for p in text.split(",")]
        return tuple(item(p) for p in parts if p)
    return parse


def _fmt_name(text: str) -> str:
    return get_format(text).name


def _mode(text: str) -> RxMode:
    return RxMode.parse(text)


# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple[Callable, str]]] = {
    "link": {
        "baud": (float, "50e9"),
        "tx_sps": (int, "4"),
        "rolloff": (float, "0.1"),
        "f3db": (float, "3.8e9"),
        "f10db": (float, "18.7e9"),
        "slow_weight": (float, "0.6"),
        "ideal_channel": (_bool, "false"),
        "alpha": (float, "0.33"),
        "v": (float, "2e8"),
        "ref_rop_dbm": (float, "-20"),
        "preemph": (_bool, "true"),
        "preemph_noise_var": (float, "0.3"),
        "clip": (float, "1.2"),
        "scope_rate": (_opt_float, "80e9"),
        "agc_knee_dbm": (_opt_float, "-29"),
        "preamp": (_bool, "true"),
    },
    "noise": {
        "sigma_thermal": (float, "0.055"),
        "beat_coeff": (float, "1e-4"),
        "rop_ref_dbm": (float, "-29"),
        "preamp_gain_db": (float, "12"),
        "bandwidth_hz": (_opt_float, "20e9"),
    },
    "cdr": {
        "kp": (float, "8e-3"),
        "ki": (float, "6e-5"),
        "lock_window": (int, "200"),
        "lock_thresh_ui": (float, "0.04"),
    },
    "equalizer": {
        "nrz_ffe": (int, "15"),
        "nrz_dfe": (int, "3"),
        "nrz_mu": (float, "2e-3"),
        "pam4_ffe": (int, "31"),
        "pam4_dfe": (int, "3"),
        "pam4_mu": (float, "1e-3"),
        "adapt_payload": (_bool, "true"),
    },
    "grid": {
        "formats": (_list(_fmt_name), "NRZ"),
        "distances_km": (_list(float), "20"),
        "rops_dbm": (_list(float), "-28"),
        "preambles": (_list(int), "0"),
        "modes": (_list(_mode), "FullLut"),
        "seeds": (_list(int), "1"),
        "payload_len": (int, "100000"),
        "guard": (int, "64"),
    },
    "lut": {
        "train_len": (int, "20000"),
        "launch_dbm": (float, "3"),
        "fixed_loss_db": (float, "22"),
    },
    "min_preamble": {
        "format": (_fmt_name, "NRZ"),
        "distance_km": (float, "20"),
        "rop_dbm": (float, "-28.5"),
        "ratio": (float, "1.25"),
        "seeds": (_list(int), "1,2,3,4,5"),
        "baseline_len": (int, "8000"),
        "resolution": (int, "50"),
        "payload_len": (int, "100000"),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    chain: LinkChain
    grid: SweepGrid
    onus: tuple[OnuProfile, ...]
    lut_train_len: int
    search: dict
    resolved: str  # canonical text of every setting, the provenance record

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.resolved.encode("utf-8")).hexdigest()


def _canonical(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_canonical(v) for v in value)
    if isinstance(value, RxMode):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _onu_entry(name: str, text: str, values: dict) -> OnuProfile:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"[onus] {name}: expected 'format, distance_km, rop_dbm|auto'")
    fmt, dist = get_format(parts[0]), float(parts[1])
    if parts[2].lower() == "auto":
        rop = launch_rop(dist, values["lut"]["launch_dbm"], values["lut"]["fixed_loss_db"],
                         values["link"]["alpha"])
    else:
        rop = float(parts[2])
    return OnuProfile(name, fmt, dist, rop)


def parse_config(text: str, seed: int = 0) -> ExperimentConfig:
    """Resolve a sectioned key/value config against the defaults.

    Unknown sections and keys are rejected so that typos do not silently fall
    back to defaults. ``seed`` becomes the link's master noise seed.
    """
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    for sec in cp.sections():
        if sec not in SCHEMA and sec != "onus":
            raise ConfigError(f"unknown config section [{sec}]")
        if sec in SCHEMA:
            for key in cp[sec]:
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
    values: dict[str, dict] = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (parser, default) in keys.items():
            raw = cp.get(sec, key, fallback=default)
            try:
                values[sec][key] = parser(raw)
            except (ValueError, ParameterError) as exc:
                raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from None

    try:
        link, nz, c, e, g = (values[k] for k in ("link", "noise", "cdr", "equalizer", "grid"))
        noise = NoiseModel(nz["sigma_thermal"], nz["beat_coeff"], nz["rop_ref_dbm"],
                           nz["preamp_gain_db"], nz["bandwidth_hz"])
        channel = ChannelConfig(link["f3db"], link["f10db"], link["slow_weight"], link["preamp"],
                                noise, int(seed), link["ideal_channel"])
        chain = LinkChain(
            baud=link["baud"], tx_sps=link["tx_sps"], rolloff=link["rolloff"],
            preemph=link["preemph"], preemph_noise_var=link["preemph_noise_var"],
            clip=link["clip"], scope_rate=link["scope_rate"], ref_rop_dbm=link["ref_rop_dbm"],
            agc_knee_dbm=link["agc_knee_dbm"], channel=channel,
            phase=PhaseModelParams(link["alpha"], link["v"], link["baud"]),
            cdr=CdrConfig(kp=c["kp"], ki=c["ki"], lock_window=c["lock_window"],
                          lock_thresh_ui=c["lock_thresh_ui"]),
            eq_nrz=EqSettings(e["nrz_ffe"], e["nrz_dfe"], e["nrz_mu"]),
            eq_pam4=EqSettings(e["pam4_ffe"], e["pam4_dfe"], e["pam4_mu"]),
            eq_adapt_payload=e["adapt_payload"])
        grid = SweepGrid(g["formats"], g["distances_km"], g["rops_dbm"], g["preambles"],
                         g["modes"], g["seeds"], g["payload_len"], g["guard"])
        if cp.has_section("onus"):
            onus = tuple(_onu_entry(name, cp["onus"][name], values) for name in cp["onus"])
        else:
            onus = tuple(grid.onus())
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None

    lines = [f"run.seed={int(seed)}"]
    for sec, keys in SCHEMA.items():
        lines += [f"{sec}.{k}={_canonical(values[sec][k])}" for k in keys]
    lines += [f"onus.{o.onu_id}={o.format.name},{o.distance_km!r},{o.rop_dbm!r}" for o in onus]
    return ExperimentConfig(chain, grid, onus, values["lut"]["train_len"],
                            values["min_preamble"], "\n".join(lines))


def read_config(path: str | None, seed: int) -> ExperimentConfig:
    if path is None:
        return parse_config("", seed)
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed)


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _metadata(cfg: ExperimentConfig, **extra) -> list[str]:
    lines = [f"# ponlut_version={__version__}", f"# config_sha256={cfg.sha256}"]
    lines += [f"# {k}={v}" for k, v in extra.items()]
    lines += [f"# {line}" for line in cfg.resolved.splitlines()]
    return lines


def cmd_build_lut(cfg: ExperimentConfig, out: str | None) -> int:
    store = build_lut(cfg.onus, cfg.chain, cfg.lut_train_len, cfg.grid.guard)
    text = dumps(store)
    _write_text(out, text)
    if out not in (None, "-"):
        for onu_id, e in sorted(store.phase_entries.items()):
            print(f"{onu_id} phase_ui={e.phase_ui!r}")
        print(f"wrote {len(store.phase_entries)} ONU entries to {out}")
    return EXIT_OK


def _grid_for_kind(grid: SweepGrid, kind: str, mode: str | None) -> SweepGrid:
    modes = grid.modes if mode is None else (RxMode.parse(mode),)
    return SweepGrid(grid.formats, grid.distances_km, grid.rops_dbm, grid.preambles, modes,
                     grid.seeds, grid.payload_len, grid.guard)


def format_rows(rows) -> list[list[str]]:
    out = []
    for r in rows:
        res = r.result
        out.append([r.format, r.mode.value, repr(r.distance_km), repr(r.rop_dbm),
                    str(r.preamble_len), str(r.seed), repr(res.ber), str(res.errors),
                    str(res.bits), "" if res.lock_index is None else str(res.lock_index),
                    "true" if res.eq_converged else "false"])
    return out


def cmd_sweep(cfg: ExperimentConfig, kind: str, lut_path: str | None, out: str | None,
              mode: str | None = None, jobs: int = 1) -> int:
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind {kind!r}; choose from {', '.join(SWEEP_KINDS)}")
    grid = _grid_for_kind(cfg.grid, kind, mode)
    store = None
    if grid.needs_lut():
        if lut_path is None:
            raise LutMissing("LUT modes requested but no --lut file given; "
                             "run 'ponlut build-lut --config <cfg> --out <lut>' first")
        store = load(lut_path)
    rows = sweep(grid, cfg.chain, store, jobs=jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(format_rows(rows))
    for line in _metadata(cfg, kind=kind, rows=len(rows)):
        buf.write(line + "\n")
    _write_text(out, buf.getvalue())
    return EXIT_OK


def cmd_min_preamble(cfg: ExperimentConfig, mode: str, lut_path: str | None,
                     out: str | None) -> int:
    mp = cfg.search
    rx = RxMode.parse(mode)
    onu = grid_onu(mp["format"], mp["distance_km"], mp["rop_dbm"])
    store = None
    if rx is not RxMode.NoLut:
        store = load(lut_path) if lut_path is not None else build_lut(
            [onu], cfg.chain, cfg.lut_train_len, cfg.grid.guard)
    plan = BurstPlan(onu, 0, mp["payload_len"], cfg.grid.guard, mp["seeds"][0])
    res = min_preamble(plan, rx, store, cfg.chain, mp["ratio"], mp["seeds"],
                       mp["baseline_len"], mp["resolution"])
    lines = [f"condition format={onu.format.name} distance_km={onu.distance_km!r} "
             f"rop_dbm={onu.rop_dbm!r} mode={rx.value}",
             f"baseline preamble={mp['baseline_len']} ber={res.baseline_ber!r}",
             f"target ber={res.target_ber!r} (ratio {mp['ratio']!r})"]
    lines += [f"evaluated preamble={length} ber={ber!r}" for length, ber in res.evaluations]
    lines.append(f"selected preamble={res.length} ber={res.ber_at_length!r}")
    lines.append(f"min_preamble={res.length}")
    text = "\n".join(lines + _metadata(cfg, command="min-preamble")) + "\n"
    _write_text(out, text)
    if out not in (None, "-"):
        print(f"min_preamble={res.length}")
    return EXIT_OK


GLOBAL_DEFAULTS = {"config": None, "seed": 0, "out": None, "mode": None}


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand. SUPPRESS keeps a
    # parser that did not see a flag from overwriting one that did.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="experiment config (sectioned key = value)")
    common.add_argument("--seed", type=int, help="master noise seed (default 0)")
    common.add_argument("--out", help="output path ('-' or omitted: stdout)")
    common.add_argument("--mode", help="receiver mode: NoLut, TapsLut or FullLut")
    p = argparse.ArgumentParser(prog="ponlut", description=__doc__, parents=[common])
    p.add_argument("--version", action="version", version=f"ponlut {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("build-lut", parents=[common], help="train per-ONU phase and taps LUTs")
    sw = sub.add_parser("sweep", parents=[common], help="run a grid of bursts, write CSV")
    sw.add_argument("--kind", required=True, choices=SWEEP_KINDS)
    sw.add_argument("--lut", help="LUT file from build-lut (needed for LUT modes)")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    mp = sub.add_parser("min-preamble", parents=[common], help="search the shortest preamble")
    mp.add_argument("--lut", help="LUT file (trained on the fly if omitted)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    try:
        if args.mode is not None:
            RxMode.parse(args.mode)
        cfg = read_config(args.config, args.seed)
        if args.command == "build-lut":
            return cmd_build_lut(cfg, args.out)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.kind, args.lut, args.out, args.mode, max(1, args.jobs))
        return cmd_min_preamble(cfg, args.mode or "NoLut", args.lut, args.out)
    except (ConfigError, ParameterError, LutVersionError, LutFormatError) as exc:
        print(f"ponlut: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LutMissing as exc:
        print(f"ponlut: {exc}", file=sys.stderr)
        return EXIT_LUT_MISSING
    except TrainingError as exc:
        print(f"ponlut: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except BaselineUnresolved as exc:
        print(f"ponlut: {exc}", file=sys.stderr)
        return EXIT_BASELINE
    except OSError as exc:
        print(f"ponlut: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
