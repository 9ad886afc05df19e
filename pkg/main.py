from __future__ import annotations

from defect_graph.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
