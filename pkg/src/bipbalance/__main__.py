import sys

from bipbalance.cli import main

sys.exit(main())
