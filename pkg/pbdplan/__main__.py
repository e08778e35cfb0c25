import sys

from pbdplan.cli import main

sys.exit(main())
