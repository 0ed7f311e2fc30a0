"""Command-line interface: ``shp simulate | entropy | detect | search | corpus``.

Configuration precedence: explicit flags, then the JSON file named by
``--config``, then the file named by $SHP_CONFIG, then built-in defaults.

Exit codes: 0 success, 1 internal error, 2 configuration/usage error,
3 I/O error.
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
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import analysis as A
from .core import ChannelConfig, ConfigError, INPUT_SOURCES
from .corpus import METHODS, clean_corpus, covert_corpus, detect, load_corpus, save_corpus
from .protocol import bits_from_bytes
from .search import ParameterSpace, SessionTemplate, run_search
from .simulator import random_message, run_session_detailed
from .trace import ImpairmentConfig, generate_synthetic_trace, load_trace

log = logging.getLogger("shp")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
CONFIG_ENV = "SHP_CONFIG"
CONFIG_SCHEMA_VERSION = 1

CONFIG_FLAGS = {
    "bitlength": int, "epsilon": int, "poi_filter": str, "inputsource": str,
    "subchanneling_mode": str, "subchanneling_bits": int, "ecc": str, "rehash_bits": int,
    "oood_bits": int, "silence_ms": float, "ispn_divisor": int, "shared_key": str,
    "subnet": str,
}


class UsageError(Exception):
    pass


def data_path(name: str) -> Path:
    return Path(str(resources.files("shp") / "data" / name))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config(args) -> ChannelConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        version = data.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
    for key in CONFIG_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return ChannelConfig.from_dict(data)


def config_document(cfg: ChannelConfig) -> dict:
    return {"schema_version": CONFIG_SCHEMA_VERSION, **cfg.to_dict()}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("channel configuration (overrides --config)")
    for key, typ in CONFIG_FLAGS.items():
        g.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--config", help=f"channel config JSON (default ${CONFIG_ENV})")
    p.add_argument("--out", help="output directory (stdout when omitted)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_trace_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", help="pcap or csv trace (default: bundled sample)")
    p.add_argument("--trace-format", choices=("pcap", "csv"))
    p.add_argument("--synthetic", action="store_true", help="generate a synthetic trace")
    p.add_argument("--rate", type=float, default=120.0, help="synthetic packets/s")
    p.add_argument("--duration", type=float, default=60.0, help="synthetic seconds")


def _trace_from(args):
    if args.synthetic:
        return generate_synthetic_trace(args.rate, args.duration, seed=args.seed), []
    path = Path(args.trace) if args.trace else data_path("sample_trace.csv")
    return load_trace(path, args.trace_format), [path]


def _message_from(args) -> tuple:
    if args.message_bits:
        return random_message(args.message_bits, args.seed), []
    path = Path(args.message) if args.message else data_path("sample_message.txt")
    raw = path.read_bytes()
    text = raw.decode("ascii", errors="ignore").strip()
    if text and not text.strip("01 \n\r\t"):
        bits = "".join(ch for ch in text if ch in "01")
    else:
        bits = bits_from_bytes(raw)
    if not bits:
        raise ConfigError(f"message file {path} is empty")
    return bits, [path]


class Outputs:
    """Collects written files for the run manifest."""

    def __init__(self, out: Optional[str]):
        self.dir = Path(out) if out else None
        self.files: list = []
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.dir is None:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
            return
        p = self.dir / name
        p.write_text(text)
        self.files.append(p)

    def manifest(self, command: str, config: Optional[dict], seeds: dict, inputs, started: float):
        if self.dir is None:
            return
        doc = {
            "tool": "shp",
            "version": __version__,
            "command": command,
            "config": config,
            "seeds": seeds,
            "inputs": [{"path": str(p), "sha256": sha256_file(p)} for p in inputs],
            "outputs": [{"path": p.name, "sha256": sha256_file(p)} for p in self.files],
            "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "wall_clock_s": round(time.time() - started, 3),
        }
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _csv_text(rows: list, fields: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _impairment(args, prefix: str) -> ImpairmentConfig:
    return ImpairmentConfig(getattr(args, prefix + "delay"), getattr(args, prefix + "jitter"),
                            getattr(args, prefix + "loss"), args.seed)


# --- commands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = load_config(args)
    trace, inputs = _trace_from(args)
    message, msg_inputs = _message_from(args)
    result = run_session_detailed(cfg, trace, message, _impairment(args, "sender_"),
                                  _impairment(args, "receiver_"), args.processing_delay_us)
    out = Outputs(args.out)
    report = result.report
    if args.format == "csv":
        d = {k: (json.dumps(v, sort_keys=True) if isinstance(v, dict) else v)
             for k, v in report.to_dict().items()}
        out.write("report.csv", _csv_text([d], list(d)))
    else:
        out.write("report.json", report.to_json())
    if args.events and out.dir:
        rows = [{"ts_us": ts, "side": side, "type": s.msg_type, "rehash": s.rehash_count,
                 "oood": s.oood_seq, "watchdog": s.watchdog}
                for side, sigs in (("sender", result.sender_signals),
                                   ("receiver", result.receiver_signals))
                for ts, s in sigs]
        rows.sort(key=lambda r: (r["ts_us"], r["side"]))
        out.write("events.csv", _csv_text(rows, ["ts_us", "side", "type", "rehash", "oood",
                                                 "watchdog"]))
    out.manifest("simulate", config_document(cfg), {"seed": args.seed}, inputs + msg_inputs,
                 started)
    return EXIT_OK


def cmd_entropy(args) -> int:
    started = time.time()
    cfg = load_config(args)
    trace, inputs = _trace_from(args)
    sources = [s for s in args.sources.split(",") if s]
    bad = [s for s in sources if s not in INPUT_SOURCES]
    if bad or not sources:
        raise UsageError(f"unknown input sources {bad}")
    try:
        epsilons = [int(e) for e in args.epsilons.split(",") if e]
    except ValueError as exc:
        raise UsageError(f"bad epsilon list {args.epsilons!r}") from exc
    if not epsilons:
        raise UsageError("no epsilon values given")
    rows = A.entropy_table(trace, sources, epsilons, cfg)
    out = Outputs(args.out)
    if args.format == "json":
        out.write("entropy.json", json.dumps(rows, indent=2))
    else:
        out.write("entropy.csv", _csv_text(rows, ["source", "epsilon", "samples", "entropy_bits"]))
    out.manifest("entropy", config_document(cfg), {"seed": args.seed}, inputs, started)
    return EXIT_OK


def cmd_detect(args) -> int:
    started = time.time()
    methods = [m for m in (args.methods or "").split(",") if m]
    if not methods or set(methods) - set(METHODS):
        raise UsageError(f"--methods must list one or more of {','.join(METHODS)}")
    clean = load_corpus(args.clean)
    suspect = load_corpus(args.suspect)
    if len(clean) < 2 or len(suspect) < 2:
        raise UsageError("each corpus needs at least two traces")
    same = Path(args.clean).resolve() == Path(args.suspect).resolve()
    card = detect(clean, suspect, methods, window=args.window, order=args.order,
                  same_corpus=same)
    for w in card.warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Outputs(args.out)
    out.write("scorecard.json", json.dumps(card.to_dict(), indent=2, sort_keys=True))
    if out.dir:
        if card.roc_points:
            out.write("roc.csv", _csv_text(
                [{"fpr": f, "tpr": t, "threshold": th} for f, t, th in card.roc_points],
                ["fpr", "tpr", "threshold"]))
        if card.kappa_summary:
            rows = [{"corpus": k, **v} for k, v in card.kappa_summary.items()]
            fields = ["corpus", "n", "min", "q1", "median", "q3", "max"]
            out.write("kappa_violin.csv", _csv_text(rows, fields))
        if card.ks:
            rows = [{"comparison": k, "D": d} for k, v in card.ks.items() for d in v["values"]]
            out.write("ks_values.csv", _csv_text(rows, ["comparison", "D"]))
        rows = []
        for name, corpus in (("clean", clean), ("suspect", suspect)):
            ipds = np.concatenate([A.arp_ipds(t) for t in corpus])
            if ipds.size:
                for q in np.linspace(0, 1, 101):
                    rows.append({"corpus": name, "ipd_s": float(np.quantile(ipds, q)), "cdf": q})
        out.write("ipd_cdf.csv", _csv_text(rows, ["corpus", "ipd_s", "cdf"]))
    inputs = [p for d in (args.clean, args.suspect) for p in sorted(Path(d).iterdir())
              if p.is_file()]
    out.manifest("detect", None, {"seed": args.seed}, inputs, started)
    return EXIT_OK


def cmd_search(args) -> int:
    started = time.time()
    base = load_config(args)
    space = ParameterSpace.with_unrounded(base=base) if args.unrounded else ParameterSpace(base=base)
    template = SessionTemplate(rate=args.rate, duration=args.duration, trace_seed=args.seed,
                               message_bits=args.message_bits, message_seed=args.seed)
    out = Outputs(args.out)
    log_path = out.dir / "search_log.jsonl" if out.dir else None
    if log_path:
        out.files.append(log_path)
    res = run_search(space, args.budget, template, args.seed, args.population, args.elite,
                     args.mutation, args.workers, log_path)
    rows = [{"rank": i + 1, "fitness": ind.fitness, **{k: v for k, v in ind.config.to_dict().items()
                                                       if k != "shared_key"}}
            for i, ind in enumerate(res.ranked[:args.top])]
    summary = {"evaluations": res.evaluations, "generations": res.generations,
               "best_history": res.best_history, "top": rows}
    if args.format == "csv":
        out.write("top.csv", _csv_text(rows, list(rows[0]) if rows else ["rank"]))
    else:
        out.write("top.json", json.dumps(summary, indent=2, sort_keys=True))
    out.manifest("search", config_document(base), {"seed": args.seed}, [], started)
    return EXIT_OK


def cmd_corpus(args) -> int:
    started = time.time()
    if not args.out:
        raise UsageError("corpus needs --out")
    cfg = load_config(args)
    seeds = range(args.seed, args.seed + args.count)
    traces = clean_corpus(seeds, args.duration)
    if args.covert:
        traces, _ = covert_corpus(traces, cfg, args.seed)
    out = Outputs(args.out)
    out.files.extend(save_corpus(traces, out.dir, args.trace_format or "csv"))
    out.manifest("corpus", config_document(cfg) if args.covert else None,
                 {"seed": args.seed, "count": args.count}, [], started)
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"shp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one covert session over a trace")
    _add_common(p)
    _add_config_flags(p)
    _add_trace_source(p)
    p.add_argument("--message", help="message file: '0'/'1' text or raw bytes")
    p.add_argument("--message-bits", type=int, help="random message of this many bits")
    for side in ("sender", "receiver"):
        p.add_argument(f"--{side}-delay", type=float, default=0.0, help="seconds")
        p.add_argument(f"--{side}-jitter", type=float, default=0.0, help="half-width, seconds")
        p.add_argument(f"--{side}-loss", type=float, default=0.0)
    p.add_argument("--processing-delay-us", type=int, default=0)
    p.add_argument("--events", action="store_true", help="also write events.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("entropy", help="entropy per input source and rounding")
    _add_common(p)
    _add_config_flags(p)
    _add_trace_source(p)
    p.add_argument("--sources", default=",".join(INPUT_SOURCES))
    p.add_argument("--epsilons", default="0,1,2,3,4,5,6")
    p.set_defaults(func=cmd_entropy, format="csv")

    p = sub.add_parser("detect", help="warden-side detection over two corpora")
    _add_common(p)
    p.add_argument("--clean", required=True, help="directory of clean traces")
    p.add_argument("--suspect", required=True, help="directory of suspect traces")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--window", type=int, default=250, help="symbols per Markov window")
    p.add_argument("--order", type=int, default=2, help="Markov order")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("search", help="genetic search for high-fitness configurations")
    _add_common(p)
    _add_config_flags(p)
    p.add_argument("--budget", type=int, default=32)
    p.add_argument("--population", type=int, default=32)
    p.add_argument("--elite", type=float, default=0.25)
    p.add_argument("--mutation", type=float, default=0.1)
    p.add_argument("--rate", type=float, default=120.0)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--message-bits", type=int, default=4096)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--unrounded", action="store_true", help="add epsilon=6 to the space")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("corpus", help="write a clean or covert LAN trace corpus")
    _add_common(p)
    _add_config_flags(p)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--covert", action="store_true")
    p.add_argument("--trace-format", choices=("pcap", "csv"))
    p.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
