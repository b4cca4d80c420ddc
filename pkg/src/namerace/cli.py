"""``namerace`` command line: prep, train, distill, predict, bench, gradcheck.

Exit codes: 0 success, 1 data or runtime failure (one ``namerace: error:`` line
on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from namerace import dataprep, inference, modelio, nncore, training
from namerace.encoding import MODES

log = logging.getLogger("namerace")

PREDICT_COLUMNS = ["firstname", "lastname", "prob_asian", "prob_black", "prob_hispanic", "prob_white", "race"]
GRADCHECK_THRESHOLD = 1e-4


class DataError(Exception):
    pass


def _thread_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("thread counts must be positive")
    return values


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="namerace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_required=True, model_help="model file"):
        p.add_argument("--model", required=model_required, help=model_help)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("prep", help="undersample, split and encode a labeled name CSV")
    p.add_argument("--input", help="CSV with columns first,last,race,gender")
    p.add_argument("--preset", choices=["toy"], help="generate the synthetic toy corpus instead of reading --input")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--method", choices=MODES, default="lastname")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)

    for name, helptext in (("train", "train a model from a prep directory"),
                           ("distill", "distill a trained teacher into a smaller student")):
        p = sub.add_parser(name, help=helptext)
        common(p, model_help="output model file")
        p.add_argument("--data", required=True, help="directory written by prep")
        if name == "distill":
            p.add_argument("--teacher", required=True, help="trained teacher model file")
        p.add_argument("--preset", choices=["teacher", "student", "toy"], required=True)
        p.add_argument("--epochs", type=_positive_int, default=10)
        p.add_argument("--batch-size", type=_positive_int, default=32)
        p.add_argument("--lr", type=float, default=1e-3)
        if name == "distill":
            p.add_argument("--temperature", type=float, default=2.0)
            p.add_argument("--alpha", type=float, default=0.5)

    p = sub.add_parser("predict", help="predict ethnicity for every row of a CSV")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-", help="output CSV (default stdout)")
    p.add_argument("--method", choices=MODES, required=True)
    p.add_argument("--first-col")
    p.add_argument("--last-col", required=True)
    p.add_argument("--na-rm", action="store_true")
    p.add_argument("--threads", type=_positive_int, default=1)

    p = sub.add_parser("bench", help="time batch inference across thread counts")
    common(p, model_required=False, model_help="model file (default: random student-preset weights)")
    p.add_argument("--method", choices=MODES, default="lastname")
    p.add_argument("--n", type=_positive_int, default=100_000)
    p.add_argument("--threads", type=_thread_list, default=[1, 2, 4, 8])
    p.add_argument("--repeats", type=_positive_int, default=5)
    p.add_argument("--output", default="-")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--preset", choices=["toy"], default="toy")
    p.add_argument("--method", choices=MODES, default="lastname")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _open_out(path: str):
    if path == "-":
        return sys.stdout
    return open(path, "w", newline="", encoding="utf-8")


def _load_prep(data_dir) -> tuple[dict, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    data_dir = Path(data_dir)
    try:
        manifest = json.loads((data_dir / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{data_dir} has no manifest.json; run prep first") from None
    Xtr, ytr = dataprep.read_encoded_csv(data_dir / "train.csv")
    Xte, yte = dataprep.read_encoded_csv(data_dir / "test.csv")
    return manifest, Xtr, ytr, Xte, yte


def _write_training_outputs(model, history, report, model_path: Path) -> None:
    modelio.save_model(model, model_path)
    stem = model_path.with_suffix("")
    with open(f"{stem}.loss.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(history.loss, 1):
            w.writerow([i, repr(loss)])
    Path(f"{stem}.eval.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {model_path}; test accuracy {report.accuracy:.4f}")


def _spec_for(preset: str, mode: str, role: str) -> nncore.ModelSpec:
    if preset == "toy":
        return nncore.toy_teacher_spec(mode) if role == "teacher" else nncore.toy_student_spec(mode)
    return nncore.PRESETS[preset](mode)


def cmd_prep(args) -> int:
    if args.preset == "toy":
        records = dataprep.toy_corpus(args.seed)
        Path(args.output).mkdir(parents=True, exist_ok=True)
        raw_path = Path(args.output) / "raw.csv"
        dataprep.write_records_csv(records, raw_path)
        rows = dataprep.read_records_csv(raw_path)
    else:
        rows = dataprep.read_records_csv(args.input)
    manifest = dataprep.prepare(rows, args.output, args.method, args.test_fraction, args.seed)
    print(f"wrote {args.output}: group size {manifest['group_size']}, "
          f"{manifest['train_rows']} train / {manifest['test_rows']} test rows")
    return 0


def _hyperparams(args) -> training.Hyperparams:
    return training.Hyperparams(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        temperature=getattr(args, "temperature", 2.0), alpha=getattr(args, "alpha", 0.5),
    )


def cmd_train(args) -> int:
    manifest, Xtr, ytr, Xte, yte = _load_prep(args.data)
    hp = _hyperparams(args)
    spec = _spec_for(args.preset, manifest["mode"], "teacher")
    model = nncore.init_model(spec, dataprep.rng_for(args.seed))
    model, history = training.train(model, Xtr, ytr, hp)
    _write_training_outputs(model, history, training.evaluate(model, Xte, yte), Path(args.model))
    return 0


def cmd_distill(args) -> int:
    manifest, Xtr, ytr, Xte, yte = _load_prep(args.data)
    teacher = modelio.load_model(args.teacher)
    if teacher.spec.mode != manifest["mode"]:
        raise DataError(f"teacher is a {teacher.spec.mode} model but {args.data} holds {manifest['mode']} data")
    spec = _spec_for(args.preset, manifest["mode"], "student")
    student, history = training.distill(teacher, spec, Xtr, ytr, _hyperparams(args))
    _write_training_outputs(student, history, training.evaluate(student, Xte, yte), Path(args.model))
    return 0


def cmd_predict(args) -> int:
    model = modelio.load_model(args.model)
    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        rows = list(reader)
    needed = [args.last_col] + ([args.first_col] if args.method == "fullname" else [])
    if fields or rows:
        absent = [c for c in needed if c not in fields]
        if absent:
            raise DataError(f"{args.input}: missing column(s) {absent}")
    lasts = [r.get(args.last_col) for r in rows]
    firsts = [r.get(args.first_col) for r in rows] if args.method == "fullname" else None
    req = inference.BatchRequest(lasts, firsts, args.method, args.threads, args.na_rm)
    try:
        preds = inference.predict_batch(req, model)
    except inference.MissingValueError as e:
        raise DataError(f"missing {e.column} in data row {e.row + 1} (line {e.row + 2} of {args.input}); "
                        "use --na-rm to drop it") from None
    columns = PREDICT_COLUMNS if args.method == "fullname" else PREDICT_COLUMNS[1:]
    fh = _open_out(args.output)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for p in preds:
            vals = [p.lastname, repr(p.prob_asian), repr(p.prob_black), repr(p.prob_hispanic),
                    repr(p.prob_white), p.race]
            w.writerow([p.firstname] + vals if args.method == "fullname" else vals)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_bench(args) -> int:
    if args.model:
        model = modelio.load_model(args.model)
    else:
        model = nncore.init_model(nncore.student_spec(args.method), dataprep.rng_for(args.seed))
    rows = inference.throughput_bench(model, args.n, args.threads, args.repeats, args.seed)
    fh = _open_out(args.output)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threads", "n", "mean_seconds"])
        for threads, n, secs in rows:
            w.writerow([threads, n, f"{secs:.6f}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def gradcheck_setup(method: str, seed: int):
    """Tiny random model and batch used by the gradcheck subcommand."""
    rng = dataprep.rng_for(seed)
    spec = nncore.stacked_spec(3, (3, 2), method)
    model = nncore.init_model(spec, rng)
    for _, _, w in model.flat():
        w += rng.normal(0.0, 0.3, size=w.shape)
    X = rng.integers(0, 29, size=(4, spec.input_length))
    y = rng.integers(0, 4, size=4)
    return model, X, y


def cmd_gradcheck(args) -> int:
    model, X, y = gradcheck_setup(args.method, args.seed)
    err = training.grad_check(model, X, y, args.epsilon)
    print(f"max_relative_error {err:.3e} threshold {GRADCHECK_THRESHOLD:.0e} params {model.n_params()}")
    return 0 if err <= GRADCHECK_THRESHOLD else 1


COMMANDS = {
    "prep": cmd_prep, "train": cmd_train, "distill": cmd_distill,
    "predict": cmd_predict, "bench": cmd_bench, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "prep" and (args.input is None) == (args.preset is None):
        parser.error("prep needs exactly one of --input or --preset toy")
    if args.command == "predict" and args.method == "fullname" and not args.first_col:
        parser.error("--method fullname requires --first-col")
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (DataError, ValueError, OSError, RuntimeError, KeyError) as e:
        msg = str(e).replace("\n", " ")
        print(f"namerace: error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
