"""
Batch driver: regenerate every preset convergence table.
Run with: python run_tables.py

Reads studies.yaml, runs each study once and writes results/<name>.csv,
results/<name>.md and results/<name>.json from the same record.
Restrict the run with STUDIES="table1,table2".
"""

import logging
import os
import sys
import time
from pathlib import Path

from dotenv import load_dotenv

from wg_stokes.study import StudyConfig, StudyError, format_report, load_presets, run_study

load_dotenv()

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger("tables")

ROOT = Path(__file__).parent
PRESETS = ROOT / "studies.yaml"
RESULTS = ROOT / "results"
FORMATS = ("csv", "md", "json")


def main() -> int:
    presets = load_presets(PRESETS)
    raw = os.environ.get("STUDIES", "").strip()
    names = [n.strip() for n in raw.split(",") if n.strip()] or list(presets)
    missing = [n for n in names if n not in presets]
    if missing:
        logger.error("Unknown studies: %s (have %s)", ", ".join(missing), ", ".join(presets))
        return 2

    RESULTS.mkdir(exist_ok=True)
    logger.info("=== Tables starting: %d studies ===", len(names))
    start = time.perf_counter()
    failed = []

    for name in names:
        logger.info("--- Study %s ---", name)
        config = StudyConfig(**presets[name])
        try:
            record, _ = run_study(config)
        except StudyError as exc:
            logger.error("  %s: failed at level %s (n=%s): %s", name, exc.level, exc.n, exc)
            failed.append(name)
            continue
        for fmt in FORMATS:
            path = RESULTS / f"{name}.{fmt}"
            path.write_text(format_report(record, config.model_copy(update={"format": fmt})))
        logger.info("  %s: %d levels written to %s/%s.{%s}", name, len(record.reports), RESULTS.name, name,
                    ",".join(FORMATS))

    logger.info("=== Tables done in %.1fs: %d ok, %d failed ===",
                time.perf_counter() - start, len(names) - len(failed), len(failed))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
