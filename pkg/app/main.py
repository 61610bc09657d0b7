from app.cli import cli
from app.logger import configure_logging


def main() -> None:
    """Console entry point (`polcomp`)."""
    configure_logging()
    cli(prog_name="polcomp")


if __name__ == "__main__":
    main()
