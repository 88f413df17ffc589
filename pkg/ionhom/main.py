"""Console entry point"""
from ionhom.api.commands import cli


def main():
    """Main entry point for the application"""
    cli(prog_name="ionhom")


if __name__ == "__main__":
    main()
