"""Thread-scaling benchmark for the student preset, reported as speedup over one thread.

    python3 scripts/bench_scaling.py --n 100000 --threads 1,2,4,8 --repeats 5
"""

import argparse
import os

from namerace.dataprep import rng_for
from namerace.inference import throughput_bench
from namerace.nncore import init_model, student_spec

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--threads", default="1,2,4,8")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--method", choices=["lastname", "fullname"], default="lastname")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    threads = sorted({int(t) for t in a.threads.split(",")} | {1})
    model = init_model(student_spec(a.method), rng_for(a.seed))
    rows = throughput_bench(model, a.n, threads, a.repeats, a.seed)
    base = rows[0][2]
    print(f"cores available: {len(os.sched_getaffinity(0)) if hasattr(os, 'sched_getaffinity') else os.cpu_count()}")
    print("threads,n,mean_seconds,names_per_second,speedup")
    for t, n, secs in rows:
        print(f"{t},{n},{secs:.4f},{n / secs:.0f},{base / secs:.2f}")
