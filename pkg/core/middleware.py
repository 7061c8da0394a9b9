"""Middleware for command dispatch.

Provides:
- LoggingMiddleware: Log every command, its duration and failures
- ManifestMiddleware: Write a run manifest on every exit path
- ConfigMiddleware: Resolve the experiment configuration for handlers

A middleware is called as ``middleware(handler, args, data)`` and must call
``handler(args, data)`` to continue the chain.
"""

import argparse
import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, Dict[str, Any]], Any]


class LoggingMiddleware:
    """Log all dispatched commands."""

    def __call__(self, handler: Handler, args: argparse.Namespace, data: Dict[str, Any]) -> Any:
        """Run the command and log it.

        Args:
            handler: Next handler in chain
            args: Parsed arguments
            data: Context data shared along the chain

        Returns:
            Handler result
        """
        command = data.get("command", "unknown")
        logger.info(f"Running command: {command}")
        started = time.perf_counter()

        try:
            result = handler(args, data)
            logger.info(f"Command {command} finished in {time.perf_counter() - started:.2f}s")
            return result
        except Exception as e:
            logger.error(f"Error in command {command}: {e}", exc_info=True)
            raise


class ManifestMiddleware:
    """Create the run manifest and write it however the command ends.

    The manifest is placed in ``data["manifest"]``; handlers add artifacts,
    metrics and codebook versions to it. It is written to
    ``<out_dir>/manifest.json`` and, when the registry is enabled, recorded
    as a run row.
    """

    def __call__(self, handler: Handler, args: argparse.Namespace, data: Dict[str, Any]) -> Any:
        from modules.experiments.models import RunManifest
        from modules.experiments.service import record_run

        # replaced by the resolved OUT_DIR once the config is known
        out_dir = getattr(args, "out_dir", None)
        manifest = RunManifest(
            command=data.get("command", "unknown"),
            out_dir=Path(out_dir) if out_dir else None,
        )
        data["manifest"] = manifest
        started = time.perf_counter()

        try:
            result = handler(args, data)
            manifest.status = "ok"
            return result
        except Exception as e:
            manifest.status = "failed"
            manifest.error = f"{type(e).__name__}: {e}"
            raise
        finally:
            manifest.timings["total_seconds"] = round(time.perf_counter() - started, 6)
            try:
                path = manifest.write()
                logger.info(f"Run manifest written to {path}")
                record_run(manifest)
            except Exception as e:
                logger.warning(f"Could not persist run manifest: {e}")


class ConfigMiddleware:
    """Resolve ``data["config"]`` from --config and override flags."""

    def __call__(self, handler: Handler, args: argparse.Namespace, data: Dict[str, Any]) -> Any:
        from core.cli import resolve_experiment_config

        cfg = resolve_experiment_config(args)
        data["config"] = cfg

        manifest = data.get("manifest")
        if manifest is not None:
            manifest.attach_config(cfg)

        return handler(args, data)
