import sys

from bgrl.cli.main import cli

if __name__ == "__main__":
    sys.exit(cli())
