import csv
import os
import time
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from config import DEFAULT_SEED, OUTPUT_DIR
from framework import PatchFramework
from manifold import Alignment
from rgd import RgdConfig
from spectral import SWEEP_COLUMNS, NoiseSweepResult, noise_sweep_experiment

load_dotenv()

SWEEP_FILE = "sweep.csv"


def parse_eps_range(text: str) -> List[float]:
    """'start:step:end' with an inclusive end; a bare number is a single level."""
    parts = text.split(":")
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise ValueError(f"expected start:step:end, got {text!r}")
    start, step, end = (float(p) for p in parts)
    if step <= 0 or start < 0 or end < start:
        raise ValueError(f"need 0 <= start <= end and step > 0, got {text!r}")
    levels = []
    k = 0
    while start + k * step <= end + 1e-12:
        levels.append(round(start + k * step, 12))
        k += 1
    return levels


def write_sweep_csv(result: NoiseSweepResult, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for row in result.rows:
            values = row.model_dump()
            writer.writerow(["" if values[c] is None else values[c] for c in SWEEP_COLUMNS])


def run_sweep(
    fw0: PatchFramework,
    s0: Alignment,
    eps_list: Sequence[float],
    trials: int = 5,
    cfg: Optional[RgdConfig] = None,
    iterations: int = 100,
    seed: int = DEFAULT_SEED,
    out_csv: Optional[str] = None,
) -> NoiseSweepResult:
    print(f"Starting noise sweep over {len(eps_list)} levels x {trials} trials...")
    start_time = time.time()
    result = noise_sweep_experiment(fw0, s0, eps_list, trials, cfg, iterations, seed)
    duration = time.time() - start_time

    out_csv = out_csv or os.path.join(OUTPUT_DIR, SWEEP_FILE)
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    write_sweep_csv(result, out_csv)

    medians = result.median("lambda_d1")
    print("\n" + "=" * 30)
    print("SWEEP COMPLETE")
    for eps, lam in zip(result.levels(), medians):
        slopes = [r.ratio_slope for r in result.rows if r.eps == eps and r.ratio_slope is not None]
        slope = f"{sum(slopes) / len(slopes):.3e}" if slopes else "n/a"
        print(f"eps={eps:.4f}  median lambda_d+1={lam:.4e}  mean log-ratio slope={slope}")
    print(f"lambda_d+1 trend inversions: {result.lambda_inversions()}")
    print(f"Rows written: {len(result.rows)} -> {out_csv}")
    print(f"Total Time: {duration:.2f}s")
    print("=" * 30)
    return result


if __name__ == "__main__":
    from fixtures import named_fixture

    truth = named_fixture("grid")
    run_sweep(truth.framework, truth.alignment, parse_eps_range("0:0.02:0.2"), trials=3)
