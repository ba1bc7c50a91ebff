"""Finite-difference validation of every gradient in the package.

Runs the per-op screen (each registered backward rule on tiny tensors)
and the composite checks (channel modules, encoder, decoder, losses) in
float64 shadow mode with frozen index selections.
"""

import time

from mmfuse.checks import TOLERANCE, run_suite
from mmfuse.model import FusionConfig


def main():
    start = time.perf_counter()
    results = run_suite(FusionConfig.desk())
    for r in results:
        marker = "PASS" if r.passed else "FAIL"
        print(f"{marker} {r.name:<22} worst relative error {r.worst:.3e}")
    failures = [r.name for r in results if not r.passed]
    print(f"\n{len(results)} checks in {time.perf_counter() - start:.1f}s, "
          f"tolerance {TOLERANCE:g}, failures: {failures or 'none'}")


if __name__ == "__main__":
    main()
