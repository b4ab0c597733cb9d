import argparse
import sys

from .backend import mock_backend
from .server import serve


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="isic-bridge",
        description="Serve the speaker wire protocol backed by the mock template rule.",
    )
    parser.add_argument("--world", required=True, help="world file for the mock backend")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=5533)
    args = parser.parse_args(argv)
    try:
        backend = mock_backend(args.world)
    except (OSError, KeyError, ValueError) as e:
        print(f"error: cannot load world {args.world}: {e}", file=sys.stderr)
        return 2
    serve(backend, (args.host, args.port))
    return 0


if __name__ == "__main__":
    sys.exit(main())
