import sys

from optdiff.bench.cli import main

if __name__ == "__main__":
    sys.exit(main())
