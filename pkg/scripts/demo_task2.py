"""Run the three paragraph-retrieval presets against the bundled mock services.

Usage: python scripts/demo_task2.py   (from the repository root)

Generates data/task2 if absent, starts an in-process mock server, and executes
task2-run1, task2-run2, and task2-run3 with endpoints pointed at it.
"""
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
import make_demo_data  # noqa: E402

from lexcourt.cli import main as cli_main  # noqa: E402
from lexcourt.mockserver import MockServer  # noqa: E402


def main() -> int:
    if not Path("data/task2/queries.jsonl").exists():
        make_demo_data.write_task2(Path("data/task2"), random.Random(7))
        print("generated data/task2")

    with MockServer(dim=8) as server:
        jobs = [
            ("task2-run1", [f"stage.1.endpoint={server.embeddings_url}"]),
            ("task2-run2", [f"stage.1.endpoint={server.chat_url}"]),
            ("task2-run3", [f"stage.1.endpoint={server.chat_url}"]),
        ]
        for preset, overrides in jobs:
            args = ["run", "--preset", preset, "--cache-dir", ".cache/demo"]
            for override in overrides + [f"output.dir=runs/demo-{preset}"]:
                args += ["--set", override]
            print(f"\n=== {preset} ===")
            rc = cli_main(args)
            if rc != 0:
                return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
