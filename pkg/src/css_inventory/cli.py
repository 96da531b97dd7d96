"""Command-line front end.

    python3 -m css_inventory simulate --speakers 8 --duration 240 --overlap 0.3 --count 5 --seed 7 --out data
    python3 -m css_inventory pipeline data/recording_000 --M 4 --out runs/r0

Settings come from an optional ``key = value`` file (``--config``) and are
overridden by flags. Every JSON artifact echoes the full configuration, and
all randomness derives from ``seed`` through :func:`seeding.sub_seed`.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import seeding
from .audio import read_wav, write_wav
from .embedder import chunk_embeddings, write_chunk_embeddings
from .inventory import (
    SpeakerInventory,
    build_inventory_from_enrollments,
    build_inventory_self,
    purity,
)
from .metrics import METRICS, eval_segments, eval_utterances
from .pipeline import SIMILARITIES, CssConfig, plan_segments, run_css
from .simulator import (
    MAX_TARGET_OVERLAP,
    SimulatedRecording,
    SyntheticCorpus,
    WavCorpus,
    enrollment,
    generate_recording,
)

log = logging.getLogger("css_inventory")

BACKENDS = ("affinity", "oracle")
INVENTORY_MODES = ("self", "enrolled")


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_speakers: int = 2
    duration_s: float = 60.0
    target_overlap: float = 0.3
    count: int = 1
    M: int = 4
    window: float = 4.0
    hop: float = 3.0
    backend: str = "affinity"
    inventory_mode: str = "self"
    similarity: str = "ncc"
    enroll_seconds: float = 10.0
    output_dir: str = "out"
    corpus: str = "synthetic"  # or a directory of spk<id>/*.wav

    def validate(self) -> "ExperimentConfig":
        if self.n_speakers < 2:
            raise ValueError("n_speakers must be >= 2")
        if self.duration_s < 10:
            raise ValueError("duration_s must be >= 10")
        if not 0 <= self.target_overlap <= MAX_TARGET_OVERLAP:
            raise ValueError(f"target_overlap must be in [0, {MAX_TARGET_OVERLAP:.2f}]; "
                             f"{self.target_overlap} is infeasible")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.enroll_seconds <= 0:
            raise ValueError("enroll_seconds must be positive")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.inventory_mode not in INVENTORY_MODES:
            raise ValueError(f"inventory_mode must be one of {INVENTORY_MODES}")
        if self.corpus != "synthetic" and not Path(self.corpus).is_dir():
            raise ValueError(f"corpus directory {self.corpus!r} does not exist")
        self.css().validate()
        return self

    def css(self, M: int | None = None) -> CssConfig:
        return CssConfig(M=self.M if M is None else M, seed=self.seed, backend=self.backend,
                         window=self.window, hop=self.hop, similarity=self.similarity)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def make_corpus(self):
        return SyntheticCorpus() if self.corpus == "synthetic" else WavCorpus(self.corpus)

    @classmethod
    def from_file(cls, path) -> dict:
        """Parse ``key = value`` lines (``#`` starts a comment) into typed overrides."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        out = {}
        for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{n}: unknown key {key!r}")
            out[key] = _coerce(types[key], value, f"{path}:{n}")
        return out


def _coerce(type_name, value: str, where: str):
    conv = {"int": int, "float": float, "str": str}[str(type_name)]
    try:
        return conv(value)
    except ValueError:
        raise ValueError(f"{where}: {value!r} is not a valid {type_name}") from None


# flag dest -> ExperimentConfig field
_OVERRIDES = {
    "seed": "seed", "speakers": "n_speakers", "duration": "duration_s",
    "overlap": "target_overlap", "count": "count", "M": "M", "window": "window",
    "hop": "hop", "backend": "backend", "inventory": "inventory_mode",
    "similarity": "similarity", "enroll_seconds": "enroll_seconds",
    "out": "output_dir", "corpus": "corpus",
}


def build_config(args) -> ExperimentConfig:
    values = ExperimentConfig.from_file(args.config) if getattr(args, "config", None) else {}
    for dest, name in _OVERRIDES.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = v
    return ExperimentConfig(**values).validate()


def _dump(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load_input(path) -> tuple:
    """``(mixture, SimulatedRecording or None)`` from a recording dir or a WAV file."""
    p = Path(path)
    if p.is_dir():
        if not (p / "mixture.wav").exists():
            raise ValueError(f"{p} is not a recording directory (no mixture.wav)")
        rec = SimulatedRecording.load(p)
        return rec.mixture, rec
    if p.suffix.lower() == ".wav" and p.exists():
        return read_wav(p), None
    raise ValueError(f"{p}: expected a recording directory or a .wav file")


def _enrolled_inventory(enroll_dir) -> SpeakerInventory:
    d = Path(enroll_dir) if enroll_dir else None
    if d is None or not d.is_dir():
        raise ValueError(f"enrolled mode needs an enrollment directory, {enroll_dir!r} not found")
    files = sorted(d.glob("spk*.wav"), key=lambda p: int(p.stem[3:]))
    if len(files) < 2:
        raise ValueError(f"enrolled mode needs at least two spk<id>.wav files in {d}")
    return build_inventory_from_enrollments([read_wav(f) for f in files],
                                            [int(f.stem[3:]) for f in files])


def _default_enroll_dir(recording_dir) -> Path | None:
    p = Path(recording_dir)
    return p.parent / "enrollments" if p.is_dir() else None


# -- commands ------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    corpus = cfg.make_corpus()
    recordings = []
    for i in range(cfg.count):
        seed = seeding.sub_seed(cfg.seed, "simulate", i)
        rec = generate_recording(cfg.n_speakers, cfg.duration_s, cfg.target_overlap, seed, corpus)
        rec.meta["config"] = cfg.to_dict()
        name = f"recording_{i:03d}"
        rec.save(out / name)
        recordings.append({
            "dir": name,
            "seed": seed,
            "realized_overlap": rec.meta["realized_overlap"],
            "rt60": rec.meta["rt60"],
            "snr_db": rec.meta["snr_db"],
        })
        log.info("%s: overlap %.3f", name, rec.meta["realized_overlap"])
    enroll_seed = seeding.sub_seed(cfg.seed, "enrollment")
    for spk in range(cfg.n_speakers):
        write_wav(out / "enrollments" / f"spk{spk}.wav",
                  enrollment(spk, enroll_seed, cfg.enroll_seconds, corpus))
    _dump(out / "manifest.json", {
        "config": cfg.to_dict(),
        "recordings": recordings,
        "enrollments": {"dir": "enrollments", "seed": enroll_seed,
                        "speakers": list(range(cfg.n_speakers))},
    })
    return out


def cmd_embed(cfg: ExperimentConfig, source, out=None, chunk: float = 1.2) -> Path:
    mixture, _ = _load_input(source)
    ce = chunk_embeddings(mixture, chunk)
    path = Path(out) if out else Path(cfg.output_dir) / "embeddings.emb"
    write_chunk_embeddings(path, ce, {"config": cfg.to_dict(), "input": str(source)})
    return path


def cmd_inventory(cfg: ExperimentConfig, source, enroll_dir=None) -> dict:
    mixture, rec = _load_input(source)
    out = Path(cfg.output_dir)
    if cfg.inventory_mode == "enrolled":
        inv = _enrolled_inventory(enroll_dir or _default_enroll_dir(source))
    else:
        inv = build_inventory_self(mixture, cfg.M, cfg.seed)
    echo = {"config": cfg.to_dict(), "input": str(source)}
    inv.save(out / "inventory.emb", echo)
    report = dict(echo, provenance=inv.provenance)
    if rec is not None:
        report["purity"] = purity(inv, rec)
        _dump(out / "purity.json", report)
    return report


def _selection_summary(entries) -> dict:
    counts = {}
    for e in entries:
        for j in e.get("selected") or []:
            counts[str(j)] = counts.get(str(j), 0) + 1
    return {"segments": len(entries), "selected_counts": counts}


def cmd_pipeline(cfg: ExperimentConfig, source, out=None, enroll_dir=None, M: int | None = None) -> dict:
    """Separate one recording, write streams, log and reports; returns the report dict."""
    mixture, rec = _load_input(source)
    out = Path(out) if out else Path(cfg.output_dir)
    css = cfg.css(M)
    inventory = None
    if cfg.inventory_mode == "enrolled":
        inventory = _enrolled_inventory(enroll_dir or _default_enroll_dir(source))
    if css.backend == "oracle" and rec is None:
        raise ValueError("the oracle backend needs a simulated recording directory")
    result = run_css(mixture, css, inventory=inventory, truth=rec)
    echo = {"config": dataclasses.replace(cfg, M=css.M).to_dict(), "input": str(source)}

    write_wav(out / "stream_0.wav", result.streams[0])
    write_wav(out / "stream_1.wav", result.streams[1])
    _dump(out / "css_log.json", dict(echo, segments=result.log))
    if result.inventory is not None:
        result.inventory.save(out / "inventory.emb", echo)

    report = dict(echo, selection=_selection_summary(result.log))
    if result.inventory is not None:
        report["inventory"] = result.inventory.provenance
    text = [f"input: {source}   M={css.M}   backend={css.backend}   inventory={cfg.inventory_mode}"]
    if rec is not None:
        label = "CSS (enrolled profiles)" if cfg.inventory_mode == "enrolled" else f"CSS (self, M={css.M})"
        utt = eval_utterances(result, rec, "si_sdr")
        seg = eval_segments(result, rec, result.plan.segments, "snr")
        report["utterance"] = {"summary": utt.summary(), "items": utt.items}
        report["segment"] = {"summary": seg.summary(), "items": seg.items}
        text.append(seg.to_table("Segment-wise SNR (dB) by overlap ratio (%)", label))
        text.append(utt.to_table("Utterance-wise SI-SDR (dB) by overlap ratio (%)", label))
        if result.inventory is not None:
            pur = purity(result.inventory, rec)
            report["purity"] = pur
            if pur["overall"] is not None:
                text.append(f"cluster purity over {pur['single_speaker_chunks']} single-speaker chunks: "
                            f"{pur['overall']:.3f}")
    _dump(out / "report.json", report)
    (out / "report.txt").write_text("\n\n".join(text) + "\n")
    return report


def _average(report, level) -> tuple:
    s = report.get(level, {}).get("summary", {})
    return s.get("average"), s.get("unprocessed_average")


def cmd_sweep_clusters(cfg: ExperimentConfig, source, M_list, enroll_dir=None) -> dict:
    """Run the pipeline for each cluster count; failed rows are kept and marked."""
    out = Path(cfg.output_dir)
    rows, unprocessed = [], None
    for M in M_list:
        row = {"M": M}
        try:
            rep = cmd_pipeline(dataclasses.replace(cfg, inventory_mode="self"), source,
                               out / f"M{M}", enroll_dir, M=M)
            row["snr"], unp = _average(rep, "segment")
            row["si_sdr"], _ = _average(rep, "utterance")
            unprocessed = unprocessed if unprocessed is not None else unp
            row["status"] = "ok"
        except (ValueError, RuntimeError) as exc:
            row.update(status="failed", error=str(exc))
            log.warning("M=%d failed: %s", M, exc)
        rows.append(row)
    ok = [r["snr"] for r in rows if r["status"] == "ok" and r.get("snr") is not None]
    summary = {
        "config": cfg.to_dict(),
        "input": str(source),
        "rows": rows,
        "unprocessed_snr": unprocessed,
        "snr_spread": (max(ok) - min(ok)) if ok else None,
    }
    _dump(out / "sweep.json", summary)
    (out / "sweep.txt").write_text(sweep_table(summary) + "\n")
    return summary


def sweep_table(summary) -> str:
    head = ["Method", "External utterances", "Clusters", "Avg. SNR", "Avg. SI-SDR"]
    body = []
    if summary.get("unprocessed_snr") is not None:
        body.append(["Unprocessed", "-", "-", f"{summary['unprocessed_snr']:.1f}", "-"])
    for r in summary["rows"]:
        if r["status"] != "ok":
            body.append(["CSS (self)", "No", str(r["M"]), "failed", "failed"])
            continue
        fmt = lambda v: "-" if v is None else f"{v:.1f}"
        body.append(["CSS (self)", "No", str(r["M"]), fmt(r.get("snr")), fmt(r.get("si_sdr"))])
    widths = [max(len(x[i]) for x in [head, *body]) for i in range(len(head))]
    line = lambda x: "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(x, widths)))
    lines = [line(head), "-" * len(line(head)), *map(line, body)]
    if summary.get("snr_spread") is not None:
        lines.append(f"SNR spread across cluster counts: {summary['snr_spread']:.2f} dB")
    return "\n".join(lines)


def cmd_eval(cfg: ExperimentConfig, source, streams_dir, metric: str = "si_sdr",
             level: str = "utterance") -> dict:
    _, rec = _load_input(source)
    if rec is None:
        raise ValueError("evaluation needs a simulated recording directory with ground truth")
    d = Path(streams_dir)
    streams = (read_wav(d / "stream_0.wav"), read_wav(d / "stream_1.wav"))
    if len(streams[0]) != len(rec.mixture):
        raise ValueError("stream length differs from the recording")
    if level == "utterance":
        rep = eval_utterances(streams, rec, metric)
    else:
        plan = plan_segments(rec.mixture.duration, cfg.window, cfg.hop)
        rep = eval_segments(streams, rec, plan.segments, metric)
    out = Path(cfg.output_dir)
    payload = {"config": cfg.to_dict(), "input": str(source), "streams": str(d),
               "level": level, "summary": rep.summary(), "items": rep.items}
    _dump(out / f"eval_{level}_{metric}.json", payload)
    table = rep.to_table(f"{level} {metric} (dB) by overlap ratio (%)")
    (out / f"eval_{level}_{metric}.txt").write_text(table + "\n")
    print(table)
    return payload


# -- argument parsing ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p, *groups):
    p.add_argument("--config", help="key = value settings file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if "sim" in groups:
        p.add_argument("--speakers", type=int)
        p.add_argument("--duration", type=float, help="seconds")
        p.add_argument("--overlap", type=float, help="target overlap ratio in [0, 1)")
        p.add_argument("--count", type=int)
        p.add_argument("--enroll-seconds", dest="enroll_seconds", type=float)
        p.add_argument("--corpus", help="'synthetic' or a directory of spk<id>/*.wav")
    if "css" in groups:
        p.add_argument("-M", "--M", dest="M", type=int, help="cluster count")
        p.add_argument("--window", type=float)
        p.add_argument("--hop", type=float)
        p.add_argument("--backend", choices=BACKENDS)
        p.add_argument("--inventory", choices=INVENTORY_MODES)
        p.add_argument("--similarity", choices=sorted(SIMILARITIES))
        p.add_argument("--enroll-dir", dest="enroll_dir",
                       help="directory of spk<id>.wav (default: <recording>/../enrollments)")


def make_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="css_inventory", description="Continuous speech separation with a self-built speaker inventory.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate long multi-talker recordings")
    _common(p, "sim")

    p = sub.add_parser("embed", help="1.2 s chunk embeddings of a recording (EMB1)")
    _common(p)
    p.add_argument("input", help="recording directory or WAV file")
    p.add_argument("--chunk", type=float, default=1.2)
    p.add_argument("--file", help="output .emb path (default: <out>/embeddings.emb)")

    p = sub.add_parser("inventory", help="build a speaker inventory and report cluster purity")
    _common(p, "css")
    p.add_argument("input", help="recording directory or WAV file")

    p = sub.add_parser("pipeline", help="separate a recording into two streams and evaluate")
    _common(p, "css")
    p.add_argument("input", help="recording directory or WAV file")

    p = sub.add_parser("sweep-clusters", help="compare cluster counts on one recording")
    _common(p, "css")
    p.add_argument("input", help="recording directory")
    p.add_argument("--M-list", dest="M_list", default="2,3,4", help="comma separated, e.g. 2,3,4")

    p = sub.add_parser("eval", help="score existing streams against a recording's ground truth")
    _common(p, "css")
    p.add_argument("input", help="recording directory")
    p.add_argument("--streams", required=True, help="directory holding stream_0.wav and stream_1.wav")
    p.add_argument("--metric", choices=sorted(METRICS), default="si_sdr")
    p.add_argument("--level", choices=("utterance", "segment"), default="utterance")
    return ap


def _int_list(s: str) -> list:
    try:
        vals = [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ValueError(f"--M-list must be comma separated integers, got {s!r}") from None
    if not vals:
        raise ValueError("--M-list is empty")
    return vals


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "simulate":
            out = cmd_simulate(cfg)
            print(f"wrote {cfg.count} recording(s) and manifest to {out}")
        elif args.command == "embed":
            print(f"wrote {cmd_embed(cfg, args.input, args.file, args.chunk)}")
        elif args.command == "inventory":
            rep = cmd_inventory(cfg, args.input, args.enroll_dir)
            pur = rep.get("purity")
            if pur and pur["overall"] is not None:
                print(f"cluster purity {pur['overall']:.3f}")
            print(f"wrote {Path(cfg.output_dir) / 'inventory.emb'}")
        elif args.command == "pipeline":
            cmd_pipeline(cfg, args.input, enroll_dir=args.enroll_dir)
            print((Path(cfg.output_dir) / "report.txt").read_text(), end="")
        elif args.command == "sweep-clusters":
            print(sweep_table(cmd_sweep_clusters(cfg, args.input, _int_list(args.M_list), args.enroll_dir)))
        elif args.command == "eval":
            cmd_eval(cfg, args.input, args.streams, args.metric, args.level)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
