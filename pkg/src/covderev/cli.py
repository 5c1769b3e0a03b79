"""Command-line front end: ``covderev {simulate,dereverb,evaluate,bench}``.

Settings come from three layers, later ones winning: built-in defaults, an
optional YAML/JSON config file (``--config``) and command-line flags. The
config file mirrors :class:`RunConfig`::

    method: proposed2
    frame_size: 1024
    hop: 512
    model: {tap_length: 6, n_iterations: 20}
    scenario: {rt60: 0.61, snr_db: 20, scenario: time-varying, seed: 0}
    seeds: [0, 1, 2, 3, 4]

Exit codes: 0 success, 1 configuration error, 2 missing file, 3 numerical
breakdown.
"""

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from . import __version__
from .metrics import evaluate, write_metrics_csv
from .model import METHOD_PRESETS, ModelConfig, NumericalBreakdown, config_for_method, save_checkpoint
from .optimizer import write_cost_log
from .pipeline import BENCH_METHODS, dereverberate, format_summary, run_bench
from .simulate import ScenarioConfig, simulate_scenario
from .stft import Waveform, read_wav, write_wav

__all__ = ["RunConfig", "ConfigError", "load_config", "build_config", "run", "main"]

logger = logging.getLogger("covderev")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISSING = 2
EXIT_BREAKDOWN = 3

COMMANDS = ("simulate", "dereverb", "evaluate", "bench")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything one CLI invocation needs, after merging all layers."""

    command: str
    method: str = "proposed2"
    model: dict = field(default_factory=dict)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    frame_size: int = 1024
    hop: int = 512
    chunk_size: int = 32
    input: Optional[str] = None
    output: Optional[str] = None
    reference: Optional[str] = None
    estimates: List[str] = field(default_factory=list)
    out_dir: Optional[str] = None
    cost_log: Optional[str] = None
    checkpoint: Optional[str] = None
    mono: bool = False
    wav_subtype: str = "float32"
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    methods: List[str] = field(default_factory=lambda: list(BENCH_METHODS))
    utterance: str = ""
    manifest: Optional[str] = None

    def model_config(self, n_mics: int = None) -> ModelConfig:
        overrides = dict(self.model)
        if n_mics is not None:
            overrides["n_mics"] = n_mics
        try:
            return config_for_method(self.method, **overrides)
        except (TypeError, ValueError) as e:
            raise ConfigError("bad model setting: {}".format(e)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.to_dict()
        return d


_TOP_KEYS = {f.name for f in fields(RunConfig)} - {"command"}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_SCENARIO_KEYS = {f.name for f in fields(ScenarioConfig)}


def load_config(path) -> dict:
    """Parse a YAML (or JSON) config file into a plain dict."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError("cannot parse {}: {}".format(path, e)) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("{} must hold a mapping at the top level".format(path))
    return data


def _check_keys(data: dict, allowed, where: str) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError("unknown {} key(s): {}".format(where, ", ".join(sorted(unknown))))


def build_config(command: str, file_data: dict = None, cli: dict = None) -> RunConfig:
    """Merge defaults, file settings and command-line settings (in that order).

    ``cli`` uses the same nested layout as the file; ``None`` values mean
    "not given" and are skipped.
    """
    if command not in COMMANDS:
        raise ConfigError("unknown command {!r}".format(command))
    top, model, scenario = {}, {}, {}
    for layer in (file_data or {}, cli or {}):
        _check_keys(layer, _TOP_KEYS, "top-level")
        for k, v in layer.items():
            if v is None:
                continue
            if k == "model":
                if not isinstance(v, dict):
                    raise ConfigError("'model' must be a mapping")
                _check_keys(v, _MODEL_KEYS, "model")
                model.update({a: b for a, b in v.items() if b is not None})
            elif k == "scenario":
                if not isinstance(v, dict):
                    raise ConfigError("'scenario' must be a mapping")
                _check_keys(v, _SCENARIO_KEYS, "scenario")
                scenario.update({a: b for a, b in v.items() if b is not None})
            else:
                top[k] = v
    try:
        cfg = RunConfig(command=command, model=model, scenario=ScenarioConfig(**scenario), **top)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    if cfg.method not in METHOD_PRESETS:
        raise ConfigError("unknown method {!r}; choose from {}".format(cfg.method, sorted(METHOD_PRESETS)))
    for m in cfg.methods:
        if m != "unprocessed" and m not in METHOD_PRESETS:
            raise ConfigError("unknown bench method {!r}".format(m))
    if cfg.wav_subtype not in ("float32", "pcm16"):
        raise ConfigError("wav_subtype must be float32 or pcm16")
    cfg.model_config()  # validate the method invariants early
    return cfg


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(cfg: RunConfig, inputs=(), extra=None) -> dict:
    out = dict(
        version=__version__,
        numpy=np.__version__,
        command=cfg.command,
        config=cfg.to_dict(),
        inputs={str(p): _sha256(p) for p in inputs},
    )
    out.update(extra or {})
    return out


def _write_json(path, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _require(value, name: str):
    if not value:
        raise ConfigError("{} is required for this command".format(name))
    return value


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    return p


def _run_simulate(cfg: RunConfig) -> None:
    out_dir = Path(_require(cfg.out_dir, "--out-dir"))
    sc = cfg.scenario
    inputs = list(sc.source_paths) + ([sc.noise_path] if sc.noise_path else [])
    for p in inputs:
        _require_file(p)
    if sc.rir_dir is not None and not Path(sc.rir_dir).is_dir():
        raise FileNotFoundError(sc.rir_dir)
    sim = simulate_scenario(sc)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(out_dir / "mixture.wav", sim.mixture, cfg.wav_subtype)
    write_wav(out_dir / "reference.wav", sim.reference, cfg.wav_subtype)
    manifest = _manifest(cfg, inputs, dict(scenario=sim.manifest))
    _write_json(cfg.manifest or out_dir / "manifest.json", manifest)
    logger.info("wrote %s", out_dir / "mixture.wav")


def _run_dereverb(cfg: RunConfig) -> None:
    src = _require_file(_require(cfg.input, "--input"))
    output = Path(_require(cfg.output, "--output"))
    w = read_wav(src)
    if cfg.method == "nctf_mono" and w.n_channels > 1:
        logger.info("nctf_mono: using channel 0 of %d", w.n_channels)
        w = Waveform(w.samples[:, :1], w.sample_rate)
    model_cfg = cfg.model_config(n_mics=None if cfg.method == "nctf_mono" else w.n_channels)
    out, model, trace = dereverberate(w, model_cfg, cfg.frame_size, cfg.hop, cfg.chunk_size)
    if cfg.mono:
        out = Waveform(out.samples.mean(axis=1), out.sample_rate)
    output.parent.mkdir(parents=True, exist_ok=True)
    write_wav(output, out, cfg.wav_subtype)
    cost_log = cfg.cost_log or str(output.with_suffix(".cost.csv"))
    write_cost_log(cost_log, trace)
    if cfg.checkpoint:
        save_checkpoint(cfg.checkpoint, model)
    _write_json(
        cfg.manifest or output.with_suffix(".manifest.json"),
        _manifest(cfg, [src], dict(model=asdict(model_cfg), final_cost=float(trace.total[-1]))),
    )
    logger.info("wrote %s and %s (final cost %.6e)", output, cost_log, trace.total[-1])


def _run_evaluate(cfg: RunConfig) -> None:
    ref_path = _require_file(_require(cfg.reference, "--reference"))
    estimates = _require(cfg.estimates, "--estimate")
    output = Path(_require(cfg.output, "--output"))
    for p in estimates:
        _require_file(p)
    ref = read_wav(ref_path)
    reports = []
    for p in estimates:
        est = read_wav(p)
        utt = cfg.utterance or Path(p).stem
        reports.append(
            evaluate(Waveform(ref.samples[:, 0], ref.sample_rate), Waveform(est.samples[:, 0], est.sample_rate),
                     utt, cfg.scenario.scenario, cfg.method)
        )
    output.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(output, reports)
    _write_json(cfg.manifest or output.with_suffix(".manifest.json"), _manifest(cfg, [ref_path] + estimates))
    for r in reports:
        print("{}: CD {:.3f} dB  LLR {:.3f}  FWSegSNR {:.3f} dB".format(r.utterance, r.cd_db, r.llr, r.fwsegsnr_db))


def _run_bench(cfg: RunConfig) -> None:
    out_dir = Path(_require(cfg.out_dir, "--out-dir"))
    reports, bench_manifest = run_bench(
        cfg.scenario,
        cfg.seeds,
        cfg.methods,
        n_iterations=cfg.model.get("n_iterations", 20),
        tap_length=cfg.model.get("tap_length"),
        frame_size=cfg.frame_size,
        hop=cfg.hop,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "metrics.csv", reports)
    table = format_summary(reports)
    (out_dir / "summary.txt").write_text(table + "\n")
    _write_json(cfg.manifest or out_dir / "manifest.json", _manifest(cfg, extra=dict(bench=bench_manifest)))
    print(table)


_HANDLERS = dict(simulate=_run_simulate, dereverb=_run_dereverb, evaluate=_run_evaluate, bench=_run_bench)


def run(cfg: RunConfig) -> int:
    """Execute ``cfg`` and map failures to exit codes."""
    try:
        _HANDLERS[cfg.command](cfg)
    except FileNotFoundError as e:
        logger.error("missing file: %s", e.filename or e)
        return EXIT_MISSING
    except NumericalBreakdown as e:
        logger.error("numerical breakdown: %s", e)
        return EXIT_BREAKDOWN
    except ValueError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--manifest", help="where to write the run manifest")
    common.add_argument("--method", choices=sorted(METHOD_PRESETS))
    common.add_argument("--iterations", type=int, dest="n_iterations")
    common.add_argument("--tap-length", type=int)
    common.add_argument("--stack-length", type=int)
    common.add_argument("--frame-size", type=int)
    common.add_argument("--hop", type=int)
    common.add_argument("--pcm16", action="store_const", const="pcm16", dest="wav_subtype",
                        help="write 16-bit PCM instead of 32-bit float WAVs")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", choices=["time-invariant", "time-varying"])
    scen.add_argument("--seed", type=int)
    scen.add_argument("--rt60", type=float)
    scen.add_argument("--drr", type=float, dest="drr_db")
    scen.add_argument("--snr", type=float, dest="snr_db")
    scen.add_argument("--duration", type=float)
    scen.add_argument("--source", action="append", dest="source_paths", help="dry source WAV (repeatable)")
    scen.add_argument("--rir-dir", help="directory of az{deg:03d}.wav responses")
    scen.add_argument("--noise", dest="noise_path", help="noise WAV")
    scen.add_argument("--mics", type=int, dest="n_mics", help="channels of the synthetic responses")
    scen.add_argument("--segment-length", type=int, help="samples between motion anchors")
    scen.add_argument("--blend-block", type=int,
                      help="samples per piecewise-constant response blend (1 = per-sample blending)")

    p = argparse.ArgumentParser(prog="covderev", description="Multichannel late-reverberation suppression.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, scen], help="generate a reverberant mixture")
    s.add_argument("--out-dir")

    d = sub.add_parser("dereverb", parents=[common], help="dereverberate a multichannel WAV")
    d.add_argument("--input", "-i")
    d.add_argument("--output", "-o")
    d.add_argument("--cost-log", help="per-frequency cost CSV (default: <output>.cost.csv)")
    d.add_argument("--checkpoint", help="save the fitted model (.npz)")
    d.add_argument("--mono", action="store_true", default=None, help="write the mean of the output channels")

    e = sub.add_parser("evaluate", parents=[common], help="score estimates against a reference")
    e.add_argument("--reference", "-r")
    e.add_argument("--estimate", "-e", action="append", dest="estimates")
    e.add_argument("--output", "-o")
    e.add_argument("--utterance")
    e.add_argument("--scenario", choices=["time-invariant", "time-varying"])

    b = sub.add_parser("bench", parents=[common, scen], help="simulate, dereverberate and score several seeds")
    b.add_argument("--out-dir")
    b.add_argument("--seeds", type=int, nargs="+")
    b.add_argument("--methods", nargs="+")
    return p


def _cli_layer(args: argparse.Namespace) -> dict:
    a = vars(args)
    model = {k: a.get(k) for k in ("n_iterations", "tap_length", "stack_length")}
    scenario = {k: a.get(k) for k in ("scenario", "seed", "rt60", "drr_db", "snr_db", "duration",
                                      "source_paths", "rir_dir", "noise_path", "n_mics", "segment_length",
                                      "blend_block")}
    top = {k: a.get(k) for k in ("method", "frame_size", "hop", "wav_subtype", "input", "output", "reference",
                                 "estimates", "out_dir", "cost_log", "checkpoint", "mono", "seeds", "methods",
                                 "utterance", "manifest")}
    top["model"] = model
    top["scenario"] = scenario
    return top


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)
    try:
        file_data = load_config(args.config) if args.config else {}
        cfg = build_config(args.command, file_data, _cli_layer(args))
    except FileNotFoundError as e:
        logger.error("missing file: %s", e)
        return EXIT_MISSING
    except ValueError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
