import sys

from evla.cli import main

sys.exit(main())
