import sys

from textadapt.cli import main

sys.exit(main())
