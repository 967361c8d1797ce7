import sys

from cru.cli import main

sys.exit(main())
