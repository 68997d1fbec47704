"""Serve the bundled mock embedding and chat endpoints until interrupted.

Usage: python scripts/run_mock_servers.py [--port 8080] [--dim 8]
"""
import argparse
import time

from lexcourt.mockserver import MockServer


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--dim", type=int, default=8, help="embedding dimensionality")
    parser.add_argument(
        "--fail-first", type=int, default=0, help="return 503 for the first N requests"
    )
    args = parser.parse_args()

    with MockServer(dim=args.dim, fail_first=args.fail_first, port=args.port) as server:
        print(f"embeddings: {server.embeddings_url}")
        print(f"chat:       {server.chat_url}")
        print("Ctrl-C to stop")
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            print("stopping")


if __name__ == "__main__":
    main()
