"""Command line: harden, scan, simulate, attack and bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .asm.program import AsmError
from .asm.syntax import parse_program
from .harness.attacks import campaign
from .harness.corpus import ManifestError, get_benchmark, load_corpus
from .harness.metrics import format_table, measure
from .harness.pipeline import PipelineConfig, PipelineError, build_variant, run_pipeline
from .layout import LayoutError, load_layout
from .passes import HardenMode, PassError
from .scanner import ScanPolicy, scan_privileged
from .sim import BACKEND, Inputs, LoadError, Machine, load_program
from .sim.machine import DEFAULT_FUEL


def _int(text: str) -> int:
    return int(text, 0)


def _common(ap, mode=True):
    if mode:
        ap.add_argument("--mode", choices=[m.value for m in HardenMode], default="silhouette")
    ap.add_argument("--layout", help="layout file with 'key = 0xHEX' lines")


def _config(args, **kw) -> PipelineConfig:
    return PipelineConfig(args.input, HardenMode.parse(args.mode), args.layout, **kw)


def cmd_harden(args) -> int:
    cfg = _config(args, shadow_stack=not args.no_shadow_stack, store_harden=not args.no_store_harden,
                  cfi=not args.no_cfi, strict_jump_tables=args.strict_jump_tables,
                  strict=args.strict, accept_risk=args.accept_risk)
    result = run_pipeline(cfg)
    code = result.exit_code
    for line in result.scan.lines():
        print(line, file=sys.stderr)
    for fn, report in sorted(result.jump_tables.items()):
        for _, line, msg in report.violations:
            print(f"WARN jump-table {fn} {line} {msg}", file=sys.stderr)
    if code == 2:
        print("scan found privileged instructions; output not written (use --accept-risk)",
              file=sys.stderr)
        return code
    if args.output:
        Path(args.output).write_text(result.text)
    else:
        sys.stdout.write(result.text)
    return code


def cmd_scan(args) -> int:
    layout = load_layout(args.layout)
    try:
        program = parse_program(Path(args.input).read_text())
    except AsmError as exc:
        raise PipelineError(exc.message, args.input, exc.line, exc.function or "") from None
    mode = HardenMode.parse(args.mode)
    report = scan_privileged(program, ScanPolicy(mode, args.hfnmiena, args.strict), layout)
    for line in report.lines():
        print(line)
    print(f"VERDICT {report.verdict}")
    return report.exit_code(args.strict, args.accept_risk)


def _sim_inputs(args, bench):
    if bench is not None:
        w = bench.workload(args.workload)
        return w.inputs(), bench.entry, bench.fuel or args.fuel
    preload = []
    for item in args.preload or ():
        addr, _, value = item.partition("=")
        preload.append((_int(addr) if addr[:1].isdigit() else addr,
                        _int(value) if value[:1].isdigit() else value, 4))
    observe = tuple((_int(a) if a[:1].isdigit() else a, _int(s))
                    for a, _, s in (o.partition(":") for o in args.observe or ()))
    argv = tuple(_int(a) if a[:1].isdigit() or a[:1] == "-" else a for a in args.args or ())
    return Inputs(argv, tuple(preload), observe), args.entry, args.fuel


def cmd_simulate(args) -> int:
    layout = load_layout(args.layout)
    bench = None
    if args.benchmark:
        bench = get_benchmark(args.benchmark)
        program = bench.program()
    else:
        if not args.input:
            print("simulate: need an input file or --benchmark", file=sys.stderr)
            return 2
        program = parse_program(Path(args.input).read_text())
    mode = HardenMode.parse(args.mode)
    if args.harden:
        program = build_variant(program, "full", mode, layout)
    inputs, entry, fuel = _sim_inputs(args, bench)
    trace = (lambda line: print(f"TRACE {line}")) if args.trace else None
    outcome = Machine(load_program(program, layout), mode, inputs=inputs, entry=entry,
                      fuel=fuel, trace=trace).run()
    if outcome.status == "halted":
        print(f"EXIT r0={outcome.exit_value}")
    elif outcome.status == "fuel":
        print("EXIT fuel-exhausted")
    else:
        print(f"TRAP {outcome.trap} {outcome.detail}")
    for line in outcome.lines():
        print(line)
    if args.counters:
        for k, v in outcome.counters.items():
            print(f"COUNTER {k}={v}")
    for k, data in enumerate(outcome.observed):
        print(f"OBSERVE {k} {data.hex()}")
    return 0 if outcome.verdict else 1


def _benchmarks(names):
    if names:
        return [get_benchmark(n) for n in names]
    return load_corpus()


def cmd_attack(args) -> int:
    layout = load_layout(args.layout)
    report = campaign(_benchmarks(args.program), HardenMode.parse(args.mode), layout,
                      controls=not args.no_controls, jobs=args.jobs)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_bench(args) -> int:
    layout = load_layout(args.layout)
    metrics = measure(_benchmarks(args.program), layout, jobs=args.jobs)
    if args.lines:
        for m in metrics:
            for line in m.lines():
                print(line)
    print("dynamic instruction ratio")
    print(format_table(metrics, "dynamic"))
    print("static code-size ratio")
    print(format_table(metrics, "static"))
    failed = [(m.program, c) for m in metrics for c, ok in m.differential.items() if not ok]
    for prog, col in failed:
        print(f"DIFF fail {prog} {col}", file=sys.stderr)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thumbguard", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s 0.1.0 ({BACKEND} kernel)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("harden", help="apply the passes and scan the result")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    _common(p)
    p.add_argument("--no-shadow-stack", action="store_true")
    p.add_argument("--no-store-harden", action="store_true")
    p.add_argument("--no-cfi", action="store_true")
    p.add_argument("--strict-jump-tables", action="store_true",
                   help="fail on jump tables without a dominating bounds check")
    p.add_argument("--strict", action="store_true", help="exit 3 if the scan reports anything")
    p.add_argument("--accept-risk", action="store_true", help="write output despite scan errors")
    p.set_defaults(func=cmd_harden)

    p = sub.add_parser("scan", help="report privileged instructions")
    p.add_argument("input")
    _common(p)
    p.add_argument("--hfnmiena", type=int, choices=(0, 1), default=1)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--accept-risk", action="store_true")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("simulate", help="run a program on the simulator")
    p.add_argument("input", nargs="?")
    _common(p)
    p.add_argument("--benchmark", help="corpus program name instead of an input file")
    p.add_argument("--workload", help="manifest workload (default: the first)")
    p.add_argument("--harden", action="store_true", help="apply all passes before running")
    p.add_argument("--entry", default="main")
    p.add_argument("--args", nargs="*", help="r0..r3 (numbers or heap+N style addresses)")
    p.add_argument("--preload", nargs="*", help="ADDR=VALUE words")
    p.add_argument("--observe", nargs="*", help="ADDR:SIZE ranges to print")
    p.add_argument("--fuel", type=int, default=DEFAULT_FUEL)
    p.add_argument("--trace", action="store_true", help="print every executed instruction")
    p.add_argument("--counters", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="run the attack campaign on hardened corpus programs")
    _common(p)
    p.add_argument("--program", nargs="*", help="corpus program names (default: all)")
    p.add_argument("--no-controls", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", help="overhead ratios per variant")
    _common(p, mode=False)
    p.add_argument("--program", nargs="*")
    p.add_argument("--lines", action="store_true", help="also print METRIC lines")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, PassError, AsmError, LayoutError, LoadError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
