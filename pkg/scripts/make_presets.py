"""Write the two reference trees as config files under configs/.

Usage: python3 scripts/make_presets.py [--dir configs]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from fstm.config import save_config
from fstm.presets import load_preset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dir", default="configs")
    args = ap.parse_args()
    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("tree1", "tree2"):
        params, rules = load_preset(name)
        save_config(params, rules, out / f"{name}.json")
        print(out / f"{name}.json")


if __name__ == "__main__":
    main()
