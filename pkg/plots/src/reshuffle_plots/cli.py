"""Command line entry: render one figure from a spec file."""

import argparse
import sys

from .figures import FigureSpec, PlotError, parse_spec_text, render


def cli_main(argv):
    parser = argparse.ArgumentParser(
        prog="reshuffle-plots",
        description="Render a figure from experiment output files.",
    )
    parser.add_argument("spec", help="figure spec: flat key=value lines or JSON")
    parser.add_argument("--output", help="override the spec's output path")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            mapping = parse_spec_text(fh.read())
        if args.output is not None:
            mapping["output"] = args.output
        path = render(FigureSpec.from_mapping(mapping))
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
