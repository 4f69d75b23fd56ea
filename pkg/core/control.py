from core.config import echo, load_config
from core.errors import ConfigError, FlockError
from core.output import RunOutput, resolve_output_dir
from core.scenarios import PIPELINES
from utils import logger

# core/control.py
# Entry point behind flockuq.py: resolve the configuration, dispatch to the
# scenario pipeline, write the manifest, and map library errors to exit codes:
#   0 success, 2 configuration error, 3 numerical failure, 130 interrupted.


def _overrides(args) -> dict:
    return {
        "scenario": getattr(args, "scenario", None),
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
        "threads": getattr(args, "threads", None),
    }


def _progress(args) -> bool:
    return (not getattr(args, "quiet", False)) and logger.cons.is_terminal


def execute(args, version: str = ""):
    overrides = _overrides(args)
    if getattr(args, "scenario", None) == "stationary":
        model = {}
        if getattr(args, "alpha", None) is not None:
            model["alpha"] = args.alpha
        if getattr(args, "D", None) is not None:
            model["D"] = args.D
        if model:
            overrides["model"] = model

    cfg = load_config(getattr(args, "config", None), overrides)

    out_dir = resolve_output_dir(cfg.output.directory, cfg.scenario, cfg.seed)
    out = RunOutput(out_dir, cfg.scenario, cfg.seed, f"flockuq {version}".strip())

    logger.info(f'Scenario "{cfg.scenario}" with seed {cfg.seed}, output in "{out_dir}"')
    logger.debug(f"Configuration: {echo(cfg)}")

    result = PIPELINES[cfg.scenario](cfg, out, progress=_progress(args))

    out.manifest(echo(cfg))
    logger.info(f"Done. {len(out.files)} file(s) written to \"{out_dir}\"")
    return result


def run(args, version: str = ""):
    try:
        return execute(args, version)
    except ConfigError as e:
        for p in e.problems:
            logger.error(f"Config: {p}")
        logger.error("Invalid configuration.", e.exit_code)
    except FlockError as e:
        logger.error(str(e), e.exit_code)
    except KeyboardInterrupt:
        print()
        logger.error("Interrupted by user.", 130)
