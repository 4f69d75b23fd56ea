import argparse
from rich.traceback import install
from core import run
from core.config import SCENARIOS

install()

VERSION = '1.0.0'
LOGO = r"""


    $$$$$$$$\ $$\                     $$\       $$\   $$\  $$$$$$\  
    $$  _____|$$ |                    $$ |      $$ |  $$ |$$  __$$\ 
    $$ |      $$ | $$$$$$\   $$$$$$$\ $$ |  $$\ $$ |  $$ |$$ /  $$ |
    $$$$$\    $$ |$$  __$$\ $$  _____|$$ | $$  |$$ |  $$ |$$ |  $$ |
    $$  __|   $$ |$$ /  $$ |$$ /      $$$$$$  / $$ |  $$ |$$ |  $$ |
    $$ |      $$ |$$ |  $$ |$$ |      $$  _$$<  $$ |  $$ |$$ $$\$$ |
    $$ |      $$ |\$$$$$$  |\$$$$$$$\ $$ | \$$\ \$$$$$$  |\$$$$$$ / 
    \__|      \__| \______/  \_______|\__|  \__| \______/  \___$$$\ 
                                                               \___|

              ──── Monte Carlo gPC for uncertain flocking ────


"""

def main():
    parser = argparse.ArgumentParser(
        description="FlockUQ: Monte Carlo gPC experiments for flocking with uncertain parameters"
    )
    parser.add_argument(
        '-v',
        '--version',
        version=f"FlockUQ {VERSION}",
        action="version"
    )

    parser.add_argument(
        'scenario',
        help="experiment to run: " + ", ".join(SCENARIOS),
        choices=SCENARIOS,
        type=str
    )
    parser.add_argument(
        '-c',
        '--config',
        dest="config",
        help="JSON scenario file (default: built-in defaults)",
        type=str,
        default=None
    )
    parser.add_argument(
        '--seed',
        dest="seed",
        help="master seed, unsigned 64-bit (overrides the config file)",
        type=int,
        default=None
    )
    parser.add_argument(
        '-o',
        '--out',
        dest="out",
        help="output directory (default: $FLOCKUQ_OUT_DIR or ./output/<scenario>_seed<seed>)",
        type=str,
        default=None
    )
    parser.add_argument(
        '-j',
        '--threads',
        dest="threads",
        help="worker processes for sweep points and replicas (default: $FLOCKUQ_THREADS or 1)",
        type=int,
        default=None
    )
    parser.add_argument(
        '-q',
        '--quiet',
        dest="quiet",
        help="hide progress bars. (default: False)",
        action="store_true"
    )

    # stationary only
    parser.add_argument(
        '--alpha',
        dest="alpha",
        help="self-propulsion strength for the stationary solver",
        type=float,
        default=None
    )
    parser.add_argument(
        '--D',
        dest="D",
        help="diffusion for the stationary solver",
        type=float,
        default=None
    )

    args = parser.parse_args()
    if (args.alpha is not None or args.D is not None) and args.scenario != "stationary":
        parser.error("--alpha/--D only apply to the stationary scenario")

    run(args, VERSION)

if __name__ == "__main__":
    print(LOGO)
    main()
