import sys

from cbmm.cli import main

sys.exit(main())
