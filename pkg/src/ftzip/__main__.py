import sys

from ftzip.cli import main

sys.exit(main())
