import sys

from slipforge.cli import main

sys.exit(main())
