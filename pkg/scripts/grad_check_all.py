"""Finite-difference check of every registered op and both composed pipelines."""
import sys

from adaptrecon.evalcli import main

if __name__ == "__main__":
    sys.exit(main(["grad-check", *sys.argv[1:]]))
