#
# Script that
#  1) simulates an uplink SCMA link over an SNR grid read from a yaml config file and writes a BER/BLER csv
#  2) prints receiver complexity orders (single profile or the full comparison table) as csv
#  3) validates codebook json files
#  4) generates the default regular codebook and writes it as json
#
# Exit status: 0 on success, 1 on validation errors, 2 on usage errors.

import argparse
import logging
import sys

import pandas as pd

import modules.codebook as codebook
import modules.sim as sim
from modules.codebook import build_factor_graph, default_codebook, load_codebook, save_codebook
from modules.complexity import MMSE_SIC, MPA, RECEIVERS, ComplexityProfile, comparison_table, complexity_order, \
    complexity_ratio
from modules.sim import UsageException, emit_csv, load_config, run_sweep


# Define the program's command line arguments and build a parser to process them
def make_cli_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='scma_sim.py', description='SCMA link-level receiver simulator')
    parser.add_argument("--log-file", type=str, dest='log_file', default='warnings.log',
                        help="File that receives the log output")
    parser.add_argument("--quiet", action='store_true',
                        help="Suppress the progress bar")
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    simulate = commands.add_parser('simulate', help="Run a BER/BLER sweep")
    simulate.add_argument("--config", type=str, dest='config_file', default='config.yaml',
                          help="Name of a yaml (or json) formatted config file")
    simulate.add_argument("--out", type=str, dest='out', required=True,
                          help="CSV file receiving one row per SNR point")
    simulate.add_argument("--workers", type=int, dest='workers',
                          help="Worker processes over SNR points (overrides the config file)")

    complexity = commands.add_parser('complexity', help="Print complexity orders as csv")
    complexity.add_argument("--table", action='store_true',
                            help="Print the full receiver comparison table")
    complexity.add_argument("--nr", type=int, default=4, help="Receive antennas N_r")
    complexity.add_argument("--n", type=int, default=4, help="Resource elements N")
    complexity.add_argument("--k", type=int, default=12, help="Users K")
    complexity.add_argument("--niter", type=int, default=9, help="Total iterations N_iter")
    complexity.add_argument("--sic-niter", type=int, dest='sic_niter', default=12,
                            help="Total iterations of SIC-MPA in the comparison table")
    complexity.add_argument("--df", type=int, default=6, help="Users per resource d_f")
    complexity.add_argument("--m", type=int, default=4, help="Codebook size M")
    complexity.add_argument("--mp", type=int, default=None, help="Projected points M_p (defaults to M)")
    complexity.add_argument("--ds", type=int, default=1, help="Users kept by SIC-MPA d_s")
    complexity.add_argument("--receiver", type=str, choices=RECEIVERS + ('all',), default='all',
                            help="Receiver to evaluate")

    validate = commands.add_parser('validate-codebook', help="Check a codebook json file")
    validate.add_argument("file", type=str, help="Codebook json file")

    generate = commands.add_parser('gen-codebook', help="Write the default regular codebook")
    generate.add_argument("--k", type=int, default=6, help="Users K")
    generate.add_argument("--n", type=int, default=4, help="Resource elements N")
    generate.add_argument("--m", type=int, default=4, help="Codebook size M")
    generate.add_argument("--dv", type=int, default=2, help="Resources per user d_v")
    generate.add_argument("--out", type=str, dest='out', required=True, help="Codebook json file to write")
    return parser


# Module level settings taken from the run configuration and command line
def initialize_modules(cfg: sim.SimConfig, args):
    if cfg.energy_tolerance is not None:
        codebook.energy_tolerance = cfg.energy_tolerance
    sim.show_progress = not args.quiet


def simulate(args) -> int:
    cfg = load_config(args.config_file)
    if args.workers:
        cfg.workers = args.workers
        cfg.validate()
    initialize_modules(cfg, args)
    result = run_sweep(cfg)
    emit_csv(result, args.out)
    print(f"Wrote {len(result.points)} SNR points to {args.out}")
    return 0


def complexity(args) -> int:
    if args.table:
        frame = comparison_table(args.nr, args.n, args.k, args.df, args.niter, args.sic_niter)
    else:
        profile = ComplexityProfile(args.nr, args.n, args.k, args.niter, args.m,
                                    args.mp if args.mp is not None else args.m, args.df, args.ds)
        receivers = RECEIVERS if args.receiver == 'all' else (args.receiver,)
        frame = pd.DataFrame([{
            'receiver': receiver, 'N_r': profile.N_r, 'N': profile.N, 'K': profile.K, 'N_iter': profile.N_iter,
            'd_f': profile.d_f, 'M': profile.M, 'M_p': profile.M_p, 'd_s': profile.d_s,
            'order': complexity_order(profile, receiver),
            'ratio_mmse_sic': complexity_ratio(profile, receiver, MMSE_SIC),
            'ratio_mpa': complexity_ratio(profile, receiver, MPA),
        } for receiver in receivers])
    frame.to_csv(sys.stdout, index=False)
    return 0


def validate_codebook(args) -> int:
    cb = load_codebook(args.file)
    fg = build_factor_graph(cb)
    shape = "tree" if fg.is_tree() else "loopy"
    print(f"OK: {cb} in {args.file}, {shape} factor graph with user degrees {fg.d_v.tolist()} "
          f"and resource degrees {fg.d_f.tolist()}")
    return 0


def gen_codebook(args) -> int:
    cb = default_codebook(args.k, args.n, args.m, args.dv)
    save_codebook(cb, args.out)
    print(f"Wrote {cb} to {args.out}")
    return 0


COMMANDS = {
    'simulate': simulate,
    'complexity': complexity,
    'validate-codebook': validate_codebook,
    'gen-codebook': gen_codebook,
}


def main(argv=None) -> int:
    parser = make_cli_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else 2

    logging.basicConfig(
        level=logging.INFO,
        filename=args.log_file,
        filemode='w'  # Fresh file every run.
    )

    try:
        return COMMANDS[args.command](args)
    except UsageException as err:
        parser.print_usage(sys.stderr)
        print("Exception: ", err)
        return 2
    except (RuntimeError, ValueError) as err:
        print("Exception: ", err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
