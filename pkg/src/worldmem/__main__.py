import sys

from worldmem.cli import main

sys.exit(main())
