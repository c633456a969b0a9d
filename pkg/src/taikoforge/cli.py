"""Command-line entry point.

Subcommands: build-dataset, train, generate, evaluate, stats. Exit codes:
0 success, 2 usage or input error, 3 internal error. All randomness runs
through explicit --seed flags so reruns are bit-identical. The
TAIKO_FORGE_THREADS environment variable caps the per-song worker count.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import audio, chart_io, dataset, generator, metrics, trainer
from .chart import NUM_CLASSES, NoteClass, binarize
from .errors import TaikoForgeError
from .neural import load_checkpoint

DEFAULT_SEED = 1337


class InputError(TaikoForgeError):
    """Bad user input discovered after argument parsing."""


def worker_count() -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get("TAIKO_FORGE_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InputError(f"TAIKO_FORGE_THREADS must be an integer, got {cap!r}")
    return n


def _map_songs(fn, items):
    """Apply fn over per-song work items, in parallel but order-preserving."""
    workers = worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _osu_files(directory: Path) -> list[Path]:
    files = sorted(directory.glob("*.osu"))
    if not files:
        raise InputError(f"no .osu files in {directory}")
    return files


def _with_file_context(path: Path, fn):
    """Re-raise toolkit errors with the offending file's name prefixed."""
    try:
        return fn()
    except TaikoForgeError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def cmd_build_dataset(args) -> int:
    if not 0.0 < args.ratio <= 1.0:
        raise InputError(f"--ratio must be in (0, 1], got {args.ratio}")
    charts_dir = Path(args.charts)
    audio_dir = Path(args.audio)
    chart_files = _osu_files(charts_dir)

    missing = [p.stem for p in chart_files if not (audio_dir / f"{p.stem}.wav").exists()]
    if missing:
        raise InputError("missing audio for chart(s): " + ", ".join(missing))

    def prepare(chart_path: Path):
        wav_path = audio_dir / f"{chart_path.stem}.wav"
        samples, rate = _with_file_context(wav_path, lambda: audio.decode_audio(wav_path))
        length_ms = len(samples) * 1000 // rate
        notes, _ = _with_file_context(
            chart_path,
            lambda: chart_io.parse_osu(chart_path.read_text(encoding="utf-8"), song_length_ms=length_ms),
        )
        feats = audio.mel_project(audio.stft_frames(samples, rate))
        return chart_path.stem, feats, notes

    prepared = _map_songs(prepare, chart_files)
    charts = {cid: (feats, notes) for cid, feats, notes in prepared}
    ds = dataset.assemble(charts, ratio=args.ratio, seed=args.seed)
    dataset.save_dataset(args.out, ds)

    class_counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    for _, notes in charts.values():
        class_counts += np.bincount(notes.frames, minlength=NUM_CLASSES)
    n_train, n_val = ds.manifest.counts()

    for entry in ds.manifest.charts:
        print(f"{entry.chart_id}: {entry.example_count} examples ({entry.split})")
    total = class_counts.sum()
    print("class histogram: " + "  ".join(
        f"{cls.name}={count} ({count / total * 100:.2f}%)"
        for cls, count in zip(NoteClass, class_counts)
    ))
    print(f"split: {n_train} train / {n_val} validation examples")
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    try:
        config = trainer.TrainConfig(
            checkpoint_dir=out_dir,
            phase1_epochs=args.phase1_epochs,
            phase1_lr=args.phase1_lr,
            phase1_batch=args.phase1_batch,
            phase2_lr=args.phase2_lr,
            phase2_max_epochs=args.phase2_max,
            seed=args.seed,
        )
    except ValueError as exc:
        raise InputError(str(exc))

    ds = dataset.load_dataset(args.dataset)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train.log"
    with log_path.open("w", encoding="utf-8") as log_file:

        def log(line: str):
            print(line)
            log_file.write(line + "\n")

        result = trainer.train(ds, config, log=log)
    if result.exploded_at:
        phase, epoch = result.exploded_at
        print(f"stopped by weight explosion at phase {phase} epoch {epoch}; kept the previous checkpoint")
    print(f"final checkpoint: {result.final_path}")
    return 0


def cmd_generate(args) -> int:
    if args.bpm <= 0:
        raise InputError("--bpm must be positive")
    params, _ = load_checkpoint(args.checkpoint)
    notes = generator.generate(params, args.audio, seed=args.seed, greedy=args.greedy)
    notes = generator.postprocess(notes)
    text = chart_io.write_osu(notes, args.bpm, Path(args.audio).name)
    Path(args.out).write_text(text, encoding="utf-8")
    dist = metrics.note_distribution(notes)
    print(metrics.distribution_table({Path(args.out).stem: dist}))
    print(f"wrote {args.out} ({len(notes)} frames)")
    return 0


def _binarize_file(path: Path):
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".sm":
        return _with_file_context(path, lambda: chart_io.parse_sm(text)), None
    notes, _ = _with_file_context(path, lambda: chart_io.parse_osu(text))
    return binarize(notes), notes


def cmd_evaluate(args) -> int:
    model_dir = Path(args.model_dir)
    human_dir = Path(args.human_dir)
    model_files = {p.stem: p for p in sorted(model_dir.glob("*.osu"))}
    human_files = {
        p.stem: p for p in sorted(list(human_dir.glob("*.osu")) + list(human_dir.glob("*.sm")))
    }
    unpaired = sorted(set(model_files) ^ set(human_files))
    if not model_files or not human_files:
        raise InputError("no charts found to evaluate")
    if unpaired:
        raise InputError("unpaired songs: " + ", ".join(unpaired))

    def eval_song(song: str):
        model_bits, model_notes = _binarize_file(model_files[song])
        human_bits, human_notes = _binarize_file(human_files[song])
        ev = metrics.evaluate_pair(song, model_bits, human_bits, seed=args.seed, draws=args.draws)
        return ev, model_notes, human_notes

    results = _map_songs(eval_song, sorted(model_files))
    report = metrics.MetricsReport([ev for ev, _, _ in results])
    print(report.to_text())

    dist_rows = {}
    model_dists = [metrics.note_distribution(m) for _, m, _ in results if m is not None]
    human_dists = [metrics.note_distribution(h) for _, _, h in results if h is not None]
    if model_dists:
        dist_rows["model"] = np.mean(model_dists, axis=0)
    if human_dists:
        dist_rows["human"] = np.mean(human_dists, axis=0)
    if dist_rows:
        print()
        print(metrics.distribution_table(dist_rows))

    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
        print(f"wrote {args.csv}")
    return 0


def cmd_stats(args) -> int:
    files = _osu_files(Path(args.charts))

    def load(path: Path):
        notes, _ = _with_file_context(path, lambda: chart_io.parse_osu(path.read_text(encoding="utf-8")))
        return path.stem, metrics.note_distribution(notes)

    rows = dict(_map_songs(load, files))
    if len(rows) > 1:
        rows["all charts"] = np.mean(list(rows.values()), axis=0)
    print(metrics.distribution_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taikoforge",
        description="Train, run, and evaluate a Taiko chart generation model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="assemble training examples from .osu + .wav pairs")
    p.add_argument("--charts", required=True, help="directory of .osu charts")
    p.add_argument("--audio", required=True, help="directory of matching .wav files (same stem)")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--ratio", type=float, default=0.9, help="train fraction of the chart split")
    p.set_defaults(fn=cmd_build_dataset)

    p = sub.add_parser("train", help="run the two-phase training schedule")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True, help="checkpoint + log directory")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--phase1-epochs", type=int, default=10)
    p.add_argument("--phase1-lr", type=float, default=1e-5)
    p.add_argument("--phase1-batch", type=int, default=16)
    p.add_argument("--phase2-lr", type=float, default=5e-6)
    p.add_argument("--phase2-max", type=int, default=8)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="generate a .osu chart for a song")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True, help="input WAV file")
    p.add_argument("--out", required=True, help="output .osu path")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--bpm", type=float, default=120.0, help="BPM written to the chart's timing point")
    p.add_argument("--greedy", action="store_true", help="argmax instead of sampling (debugging)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="compare generated charts against human charts")
    p.add_argument("--model-dir", required=True, help=".osu charts to evaluate")
    p.add_argument("--human-dir", required=True, help="reference .osu/.sm charts, paired by filename stem")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--draws", type=int, default=1, help="random charts averaged for dc_rand")
    p.add_argument("--csv", help="also write per-song metric rows to this CSV file")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("stats", help="note-type distribution of a chart directory")
    p.add_argument("--charts", required=True)
    p.set_defaults(fn=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # fail on bad paths before any long-running work
    for attr in ("charts", "audio", "dataset", "checkpoint", "model_dir", "human_dir"):
        value = getattr(args, attr, None)
        if value is not None and not Path(value).exists():
            print(f"error: {attr.replace('_', '-')} path does not exist: {value}", file=sys.stderr)
            return 2
    for attr in ("out", "csv"):
        value = getattr(args, attr, None)
        if value is not None and not Path(value).resolve().parent.is_dir():
            print(f"error: directory for --{attr} does not exist: {value}", file=sys.stderr)
            return 2

    try:
        return args.fn(args)
    except TaikoForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
