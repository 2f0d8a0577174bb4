import sys

from stainrecon.cli import main

sys.exit(main())
