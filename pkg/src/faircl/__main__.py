import sys

from faircl.cli import main

sys.exit(main())
