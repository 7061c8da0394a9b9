"""Command-line core and module loading.

Provides CliCore class for:
- Creating the root argument parser
- Registering middleware
- Loading modules (each registers its subcommands through setup())
- Dispatching one command
"""

import argparse
import importlib
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from config import Config, ExperimentConfig
from core.middleware import ConfigMiddleware, LoggingMiddleware, ManifestMiddleware

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, Dict[str, Any]], Any]


def add_experiment_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every experiment-driven subcommand."""
    parser.add_argument("--config", type=Path, default=None,
                        help="experiment file (KEY=VALUE); defaults apply when omitted")
    parser.add_argument("--seed", type=int, default=None, help="override SEED")
    parser.add_argument("--deterministic", dest="deterministic", action="store_true", default=None,
                        help="serial, bit-reproducible execution")
    parser.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    parser.add_argument("--out-dir", type=Path, default=None, help="override OUT_DIR")


def resolve_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment file (or defaults) with command-line overrides applied.

    Raises:
        ConfigError: If the file is missing or invalid
    """
    cfg = ExperimentConfig.from_file(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides: Dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "deterministic", None) is not None:
        overrides["deterministic"] = args.deterministic
    if getattr(args, "out_dir", None) is not None:
        overrides["out_dir"] = str(args.out_dir)
    return cfg.with_overrides(**overrides) if overrides else cfg


class CliCore:
    """Core CLI class handling parser construction and module management."""

    def __init__(self, prog: str = "snapq", write_manifests: bool = True):
        """Initialize CLI core.

        Args:
            prog: Program name shown in usage
            write_manifests: Whether commands write run manifests
        """
        logger.debug("Initializing CliCore...")

        self.parser = argparse.ArgumentParser(
            prog=prog,
            description="Product quantization with gradient snapping: training, encoding, search and evaluation",
        )
        self.subparsers = self.parser.add_subparsers(dest="command", metavar="COMMAND")

        # Order matters: Logging -> Manifest -> Config -> handler
        self._middleware: List[Any] = [LoggingMiddleware()]
        if write_manifests:
            self._middleware.append(ManifestMiddleware())
        self._middleware.append(ConfigMiddleware())

        self._loaded_modules: List[str] = []

    def load_module(self, module_path: str) -> None:
        """Load a module and register its subcommands.

        Args:
            module_path: Python import path (e.g., 'modules.vq')

        Raises:
            ImportError: If module cannot be imported
            AttributeError: If module doesn't have setup() function
        """
        logger.debug(f"Loading module: {module_path}")

        try:
            module = importlib.import_module(module_path)

            if not hasattr(module, 'setup'):
                raise AttributeError(f"Module {module_path} must have a setup() function")

            module.setup(self.subparsers)
            self._loaded_modules.append(module_path)
            logger.debug(f"Module loaded successfully: {module_path}")

        except ImportError as e:
            logger.error(f"Failed to import module {module_path}: {e}")
            raise
        except AttributeError as e:
            logger.error(f"Module {module_path} missing setup() function: {e}")
            raise

    def load_modules(self, module_paths: Sequence[str]) -> None:
        """Load multiple modules, skipping the ones that fail."""
        for module_path in module_paths:
            try:
                self.load_module(module_path)
            except Exception as e:
                logger.error(f"Skipping module {module_path} due to error: {e}")
                continue

        logger.debug(f"Loaded {len(self._loaded_modules)}/{len(module_paths)} modules successfully")

    def _wrap(self, handler: Handler) -> Handler:
        wrapped = handler
        for middleware in reversed(self._middleware):
            wrapped = (lambda mw, nxt: lambda args, data: mw(nxt, args, data))(middleware, wrapped)
        return wrapped

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Parse arguments and dispatch one command.

        Returns:
            Exit status: 0 on success, 2 for expected failures, 1 otherwise
        """
        from core.exceptions import SnapqError

        args = self.parser.parse_args(argv)
        handler = getattr(args, "handler", None)
        if handler is None:
            self.parser.print_help()
            return 1

        data: Dict[str, Any] = {"command": args.command}
        try:
            self._wrap(handler)(args, data)
        except SnapqError:
            return 2
        except Exception:
            return 1
        return 0

    def get_loaded_modules(self) -> List[str]:
        return self._loaded_modules.copy()


def build_cli(module_paths: Optional[Sequence[str]] = None, write_manifests: bool = True) -> CliCore:
    """CliCore with the enabled modules loaded."""
    cli = CliCore(write_manifests=write_manifests)
    cli.load_modules(module_paths if module_paths is not None else Config.ENABLED_MODULES)
    return cli
