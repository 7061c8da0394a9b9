"""Main entry point for snapq.

Product quantization with gradient snapping: trains codebooks and embedding
networks, encodes and searches vector databases, and runs evaluation and
ablation experiments from the command line.
"""

import logging
import sys
from pathlib import Path

# Load environment variables from .env file if it exists
from dotenv import load_dotenv

env_file = Path(__file__).parent / '.env'
if env_file.exists():
    load_dotenv(env_file)

# Import after loading .env
from config import Config  # noqa: E402
from core.cli import build_cli  # noqa: E402
from core.database import close_database  # noqa: E402

# Configure logging
handlers = [logging.StreamHandler(sys.stdout)]
if Config.LOG_FILE:
    Path(Config.LOG_FILE).parent.mkdir(parents=True, exist_ok=True)
    handlers.append(logging.FileHandler(Config.LOG_FILE, encoding="utf-8"))

logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL),
    format=Config.LOG_FORMAT,
    handlers=handlers,
)

logger = logging.getLogger(__name__)


def main() -> int:
    """Main application entry point."""
    logger.info("=" * 60)
    logger.info("Starting snapq")
    logger.info("=" * 60)
    if env_file.exists():
        logger.info(f"Loaded environment from {env_file}")

    Config.print_config()

    try:
        cli = build_cli()
        logger.debug(f"Loaded modules: {', '.join(cli.get_loaded_modules())}")
        status = cli.run()
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        status = 130
    finally:
        close_database()

    logger.info("=" * 60)
    logger.info(f"snapq finished with status {status}")
    logger.info("=" * 60)
    return status


if __name__ == '__main__':
    sys.exit(main())
