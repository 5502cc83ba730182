"""Console entry point.

Thread caps have to land in the environment before numpy loads its BLAS,
so this module stays import-light: the heavy imports happen inside main()
after CVRLAB_THREADS has been applied.
"""

import os
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("CVRLAB_THREADS")
    if not cap:
        return
    try:
        threads = int(cap)
    except ValueError:
        print(f"error: CVRLAB_THREADS must be an integer, got {cap!r}",
              file=sys.stderr)
        raise SystemExit(2)
    if threads < 1:
        print(f"error: CVRLAB_THREADS must be positive, got {threads}",
              file=sys.stderr)
        raise SystemExit(2)
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def main() -> None:
    _apply_thread_cap()
    from .cli import run
    raise SystemExit(run())


if __name__ == "__main__":
    main()
