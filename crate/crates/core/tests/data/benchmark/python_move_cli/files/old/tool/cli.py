import argparse
import sys

from tool import util


def build_parser():
    parser = argparse.ArgumentParser(prog="tool")
    parser.add_argument("paths", nargs="+")
    parser.add_argument("--limit", default="10m")
    return parser


def load(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except:
        return None


def summarize(paths, limit):
    total = 0
    for path in paths:
        data = load(path)
        if data is None:
            continue
        total += len(data)
    return total


def main(argv=None):
    args = build_parser().parse_args(argv)
    limit = util.parse_size(args.limit)
    total = summarize([p for p in args.paths if not util.is_hidden(p)], limit)
    if total > limit: sys.exit(1)
    return 0
