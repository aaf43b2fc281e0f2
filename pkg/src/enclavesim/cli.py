"""Command line front end: assemble images, run scenarios, dump traces,
and search for distinguishing contexts between two protected modules."""

from __future__ import annotations

import argparse
import os
import sys

from .asm import AsmError
from .asm import assemble_file
from .cpu import save_checkpoint
from .equiv import BacktranslationError, find_distinguisher, load_module
from .memory import save_image, save_sidecar
from .scenario import ScenarioError, load_scenario, report_csv, run_scenario
from .traces import dump_fine, dump_fine_csv


def _cmd_asm(args) -> int:
    image, layout, _ = assemble_file(args.source)
    out = args.output or os.path.splitext(args.source)[0] + ".img"
    save_image(out, image)
    sidecar = os.path.splitext(out)[0] + ".layout"
    save_sidecar(sidecar, layout)
    print(f"wrote {out} and {sidecar}")
    return 0


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    res = run_scenario(sc)
    for sid, label, value in res.rows:
        print(f"{sid:>12}  {label:<20} {'-' if value is None else value}")
    if args.dump_traces:
        for sid, run in res.runs.items():
            print(f"--- trace [{sid}] ({run.outcome})")
            for line in dump_fine(run.fine):
                print(line)
    if args.report:
        with open(args.report, "w") as f:
            f.write(report_csv(res))
        print(f"report written to {args.report}")
    if args.checkpoint:
        many = len(res.machines) > 1
        for sid, m in res.machines.items():
            path = f"{args.checkpoint}.{sid}" if many else args.checkpoint
            save_checkpoint(path, m)
            print(f"checkpoint written to {path}")
    for msg in res.failures:
        print(f"FAIL {msg}", file=sys.stderr)
    if res.ok:
        print("all checks passed" if sc.checks else "done")
        return 0
    return 1


def _cmd_trace(args) -> int:
    sc = load_scenario(args.scenario)
    res = run_scenario(sc)
    wanted = [args.secret] if args.secret else [s.id for s in sc.secrets]
    lines = []
    for sid in wanted:
        if sid not in res.runs:
            print(f"no such secret {sid!r}", file=sys.stderr)
            return 2
        run = res.runs[sid]
        if args.format == "csv":
            body = dump_fine_csv(run.fine)
            if lines:
                body = body[1:]  # one header for the whole file
            lines += body
        else:
            lines.append(f"--- trace [{sid}] ({run.outcome})")
            lines += dump_fine(run.fine)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"trace written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_fa(args) -> int:
    mod_a = load_module(args.module_a)
    mod_b = load_module(args.module_b)
    verdict = find_distinguisher(mod_a, mod_b, budget=args.budget, fuel=args.fuel)
    if verdict is None:
        print("no distinguishing context found within the budget")
        return 1
    print(f"context:    {verdict.context_label}")
    print(f"divergence: {verdict.divergence} at coarse index {verdict.divergence_index}")
    print(f"gadget:     {verdict.gadget}")
    print(f"replay:     a {'converges' if verdict.converges_a else 'diverges'}, "
          f"b {'converges' if verdict.converges_b else 'diverges'}")
    print("verdict:    distinguished" if verdict.ok else "verdict:    inconclusive")
    return 0 if verdict.ok else 1


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="sim",
        description="cycle-accurate enclave machine simulator",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    p_asm = sub.add_parser("asm", help="assemble a source file into a memory image")
    p_asm.add_argument("source")
    p_asm.add_argument("-o", "--output", help="image path (default: <source>.img)")
    p_asm.set_defaults(fn=_cmd_asm)

    p_run = sub.add_parser("run", help="run a scenario across its secrets")
    p_run.add_argument("scenario")
    p_run.add_argument("--report", metavar="CSV", help="write probe values as CSV")
    p_run.add_argument("--checkpoint", metavar="PATH",
                       help="write the final machine state (suffixed per secret)")
    p_run.add_argument("--dump-traces", action="store_true",
                       help="print each secret's fine trace")
    p_run.set_defaults(fn=_cmd_run)

    p_tr = sub.add_parser("trace", help="dump the fine trace of a scenario")
    p_tr.add_argument("scenario")
    p_tr.add_argument("--out", help="write to a file instead of stdout")
    p_tr.add_argument("--format", choices=("text", "csv"), default="text")
    p_tr.add_argument("--secret", help="restrict to one secret id")
    p_tr.set_defaults(fn=_cmd_trace)

    p_fa = sub.add_parser("fa", help="search for a context distinguishing two modules")
    p_fa.add_argument("module_a")
    p_fa.add_argument("module_b")
    p_fa.add_argument("--budget", type=int, default=48,
                      help="try one interrupt at each cycle up to this bound")
    p_fa.add_argument("--fuel", type=int, default=4000)
    p_fa.set_defaults(fn=_cmd_fa)

    args = p.parse_args(argv)
    try:
        return args.fn(args)
    except (AsmError, ScenarioError, BacktranslationError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
