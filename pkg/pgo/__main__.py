"""Entry point for python -m pgo"""

from pgo.cli import cli

if __name__ == '__main__':
    cli()
