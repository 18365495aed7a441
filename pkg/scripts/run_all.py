"""Run every shipped config through the CLI and collect outputs in one directory.

    python3 scripts/run_all.py --out results [--workers 4] [--only sddp_gap]
"""

import argparse
import sys
from pathlib import Path

from eboc import cli
from eboc.config import load_config

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--configs", default=str(ROOT / "configs"))
    p.add_argument("--only", default=None, help="run only configs of this experiment kind")
    args = p.parse_args(argv)
    worst = 0
    for path in sorted(Path(args.configs).glob("*.toml")):
        kind = load_config(path).kind
        if args.only and kind != args.only:
            continue
        print(f"== {path.name}", flush=True)
        code = cli.main([kind, "--config", str(path), "--workers", str(args.workers), "--out", args.out])
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
