"""``flowstab`` command line: run scenarios, list checks, emit time series."""
import argparse
import sys

from .errors import FlowstabError
from .harness import emit_for_scenario, list_checks, load_scenario, run_scenario


def _parser():
    p = argparse.ArgumentParser(prog="flowstab", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute the checks of a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", default=None, help="output directory (default $FLOWSTAB_OUT)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int, default=None)
    sub.add_parser("list-checks", help="print the check registry")
    e = sub.add_parser("emit", help="write one sampled trajectory as CSV")
    e.add_argument("scenario")
    e.add_argument("--trajectory", type=int, required=True)
    e.add_argument("--out", default=None)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "list-checks":
            for cid, ref in list_checks():
                print(f"{cid:8s} {ref}")
            return 0
        if args.cmd == "emit":
            path = emit_for_scenario(load_scenario(args.scenario), args.trajectory, args.out)
            print(path)
            return 0
        rep = run_scenario(args.scenario, args.out, args.jobs, args.seed)
        for res in rep.results:
            line = f"{res.check_id:8s} {res.status:16s} {res.reference}"
            if res.message:
                line += f"  [{res.message}]"
            print(line)
        return rep.exit_status
    except FlowstabError as exc:
        print(f"flowstab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
