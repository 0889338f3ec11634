"""``python -m intersection_rl {train,drive,eval} ...``"""

from __future__ import annotations

import sys

_COMMANDS = ("train", "drive", "eval")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in _COMMANDS:
        print(f"usage: python -m intersection_rl {{{','.join(_COMMANDS)}}} [options]", file=sys.stderr)
        return 2
    command, rest = argv[0], argv[1:]
    if command == "train":
        from intersection_rl.train import cli
    elif command == "drive":
        from intersection_rl.drive_cli import cli
    else:
        from intersection_rl.eval_cli import cli
    return cli(rest)


if __name__ == "__main__":
    sys.exit(main())
