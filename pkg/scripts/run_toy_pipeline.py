"""Generate the toy corpus, train a teacher, distill a student and score both.

    python3 scripts/run_toy_pipeline.py --out runs/toy --method fullname --seed 0
"""

import argparse
import json
import time
from pathlib import Path

from namerace.cli import main as cli


def run(out: Path, method: str, seed: int, teacher_epochs: int, student_epochs: int, lr: float) -> dict:
    data = out / "data"
    steps = [
        ["prep", "--preset", "toy", "--method", method, "--output", data, "--seed", seed],
        ["train", "--data", data, "--preset", "toy", "--model", out / "teacher.json",
         "--epochs", teacher_epochs, "--lr", lr, "--seed", seed],
        ["distill", "--data", data, "--teacher", out / "teacher.json", "--preset", "toy",
         "--model", out / "student.json", "--epochs", student_epochs, "--lr", lr, "--seed", seed],
    ]
    timings = {}
    for argv in steps:
        t0 = time.perf_counter()
        if cli([str(a) for a in argv]) != 0:
            raise SystemExit(f"step {argv[0]} failed")
        timings[argv[0]] = round(time.perf_counter() - t0, 2)
    summary = {"method": method, "seed": seed, "seconds": timings}
    for role in ("teacher", "student"):
        ev = json.loads((out / f"{role}.eval.json").read_text())
        summary[role] = {"accuracy": ev["accuracy"],
                         "recall": {c: v["recall"] for c, v in ev["classes"].items()}}
    return summary


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/toy"))
    ap.add_argument("--method", choices=["lastname", "fullname"], default="fullname")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--teacher-epochs", type=int, default=8)
    ap.add_argument("--student-epochs", type=int, default=10)
    ap.add_argument("--lr", type=float, default=0.01)
    a = ap.parse_args()
    result = run(a.out, a.method, a.seed, a.teacher_epochs, a.student_epochs, a.lr)
    print(json.dumps(result, indent=2))
